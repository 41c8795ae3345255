use super::tableau::*;
use super::StepperConfig;
use crate::error::{Error, Result};

/// Right-hand side of an autonomous or time-dependent system y' = f(t, y).
pub trait OdeRhs {
    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]);
}

impl<F: Fn(f64, &[f64], &mut [f64])> OdeRhs for F {
    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        self(t, y, dy)
    }
}

/// Seventh-order continuous extension of one accepted step.
#[derive(Debug, Clone)]
pub struct DenseOutput {
    pub t0: f64,
    pub h: f64,
    n: usize,
    cont: Vec<f64>,
}

impl DenseOutput {
    fn empty(n: usize) -> Self {
        Self { t0: 0.0, h: 0.0, n, cont: vec![0.0; 8 * n] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    fn coeffs(&self, s: f64) -> [f64; 8] {
        // y = c1 + s(c2 + s1(c3 + s(c4 + s1(c5 + s(c6 + s1(c7 + s c8))))))
        let s1 = 1.0 - s;
        [1.0, s, s * s1, s * s1 * s, s * s1 * s * s1, s * s1 * s * s1 * s, s * s1 * s * s1 * s * s1, s * s1 * s * s1 * s * s1 * s]
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let b = self.coeffs((t - self.t0) / self.h);
        let n = self.n;
        for (i, o) in out.iter_mut().enumerate().take(n) {
            let mut acc = 0.0;
            for (k, bk) in b.iter().enumerate().rev() {
                acc += bk * self.cont[k * n + i];
            }
            *o = acc;
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.eval_into(t, &mut out);
        out
    }

    pub fn eval_component(&self, i: usize, t: f64) -> f64 {
        let b = self.coeffs((t - self.t0) / self.h);
        let n = self.n;
        let mut acc = 0.0;
        for (k, bk) in b.iter().enumerate().rev() {
            acc += bk * self.cont[k * n + i];
        }
        acc
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub evals: usize,
    pub accepted: usize,
    pub rejected: usize,
}

/// Adaptive DOP853 stepper driven one accepted step at a time.
pub struct Dop853<'a, F: OdeRhs + ?Sized> {
    f: &'a F,
    cfg: StepperConfig,
    n: usize,
    t: f64,
    y: Vec<f64>,
    t_old: f64,
    y_old: Vec<f64>,
    h_old: f64,
    h: f64,
    k: Vec<Vec<f64>>,
    ytmp: Vec<f64>,
    ynew: Vec<f64>,
    swap_pending: bool,
    dense: DenseOutput,
    dense_valid: bool,
    facold: f64,
    attempts: usize,
    stats: StepStats,
}

impl<'a, F: OdeRhs + ?Sized> Dop853<'a, F> {
    pub fn new(f: &'a F, t0: f64, y0: &[f64], cfg: StepperConfig) -> Result<Self> {
        cfg.validate()?;
        let n = y0.len();
        if n == 0 {
            return Err(Error::InvalidParameter("empty state".into()));
        }
        let mut k = vec![vec![0.0; n]; 16];
        f.eval(t0, y0, &mut k[0]);
        if k[0].iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { t: t0 });
        }
        let mut s = Self {
            f,
            cfg,
            n,
            t: t0,
            y: y0.to_vec(),
            t_old: t0,
            y_old: y0.to_vec(),
            h_old: 0.0,
            h: 0.0,
            k,
            ytmp: vec![0.0; n],
            ynew: vec![0.0; n],
            swap_pending: false,
            dense: DenseOutput::empty(n),
            dense_valid: false,
            facold: 1e-4,
            attempts: 0,
            stats: StepStats { evals: 1, ..Default::default() },
        };
        s.h = if cfg.h_init > 0.0 { cfg.h_init.min(cfg.h_max) } else { s.initial_step() };
        Ok(s)
    }

    pub fn t(&self) -> f64 {
        self.t
    }
    pub fn y(&self) -> &[f64] {
        &self.y
    }
    pub fn t_prev(&self) -> f64 {
        self.t_old
    }
    pub fn y_prev(&self) -> &[f64] {
        &self.y_old
    }
    pub fn stats(&self) -> StepStats {
        self.stats
    }
    pub fn next_step_size(&self) -> f64 {
        self.h
    }

    /// Replace the current state between steps (used for clamping).
    pub fn reset_state(&mut self, y: &[f64]) {
        self.finish_swap();
        self.y.copy_from_slice(y);
        let (k0, ytmp) = (&mut self.k[0], &self.y);
        self.f.eval(self.t, ytmp, k0);
        self.stats.evals += 1;
        self.dense_valid = false;
    }

    fn finish_swap(&mut self) {
        if self.swap_pending {
            self.k.swap(0, 12);
            self.swap_pending = false;
        }
    }

    fn weights(&self, y: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(y.iter().map(|x| self.cfg.abs_tol + self.cfg.rel_tol * x.abs()));
    }

    fn initial_step(&mut self) -> f64 {
        let mut sk = Vec::new();
        self.weights(&self.y, &mut sk);
        let dnf: f64 = self.k[0].iter().zip(&sk).map(|(f, s)| (f / s).powi(2)).sum();
        let dny: f64 = self.y.iter().zip(&sk).map(|(y, s)| (y / s).powi(2)).sum();
        let mut h = if dnf <= 1e-10 || dny <= 1e-10 { 1e-6 } else { (dny / dnf).sqrt() * 0.01 };
        h = h.min(self.cfg.h_max);
        for i in 0..self.n {
            self.ytmp[i] = self.y[i] + h * self.k[0][i];
        }
        let (ytmp, k1) = (&self.ytmp, &mut self.k[1]);
        self.f.eval(self.t + h, ytmp, k1);
        self.stats.evals += 1;
        let der2: f64 = (0..self.n)
            .map(|i| ((self.k[1][i] - self.k[0][i]) / sk[i]).powi(2))
            .sum::<f64>()
            .sqrt()
            / h;
        let der12 = der2.abs().max(dnf.sqrt());
        let h1 = if !(der12 > 1e-15) { (h * 1e-3).max(1e-6) } else { (0.01 / der12).powf(1.0 / 8.0) };
        (100.0 * h).min(h1).min(self.cfg.h_max)
    }

    fn stage(&mut self, dst: usize, c: f64, h: f64, terms: &[(usize, f64)]) {
        let n = self.n;
        for i in 0..n {
            let mut acc = 0.0;
            for &(s, a) in terms {
                acc += a * self.k[s][i];
            }
            self.ytmp[i] = self.y[i] + h * acc;
        }
        let (ytmp, kd) = (&self.ytmp, &mut self.k[dst]);
        self.f.eval(self.t + c * h, ytmp, kd);
    }

    /// Advance by one accepted step without passing `t_end`.
    pub fn step(&mut self, t_end: f64) -> Result<()> {
        self.finish_swap();
        if self.t >= t_end {
            return Ok(());
        }
        let mut rejected_last = false;
        loop {
            if self.attempts >= self.cfg.max_steps {
                return Err(Error::StepBudget { t: self.t, max_steps: self.cfg.max_steps });
            }
            let mut h = self.h.min(self.cfg.h_max);
            let mut last = false;
            if self.t + 1.01 * h >= t_end {
                h = t_end - self.t;
                last = true;
            }
            let floor = self.cfg.h_min.max(16.0 * f64::EPSILON * self.t.abs());
            if h < floor && !last {
                return Err(Error::StepUnderflow { t: self.t, h, state: self.y.clone() });
            }
            self.attempts += 1;
            let err = self.try_step(h);
            self.stats.evals += 11;
            let err = if err.is_finite() { err } else { f64::INFINITY };
            let fac11 = err.powf(1.0 / 8.0);
            let fac = (1.0 / 6.0f64).max((1.0 / 0.333f64).min(fac11 / 0.9));
            let mut h_new = h / fac;
            if err <= 1.0 {
                self.facold = err.max(1e-4);
                let t_new = if last { t_end } else { self.t + h };
                {
                    let (ynew, k13) = (&self.ynew, &mut self.k[12]);
                    self.f.eval(t_new, ynew, k13);
                }
                self.stats.evals += 1;
                if self.k[12].iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite { t: t_new });
                }
                if rejected_last {
                    h_new = h_new.min(h);
                }
                std::mem::swap(&mut self.y_old, &mut self.y);
                self.y.copy_from_slice(&self.ynew);
                self.t_old = self.t;
                self.h_old = h;
                self.t = t_new;
                self.h = h_new;
                self.swap_pending = true;
                self.dense_valid = false;
                self.stats.accepted += 1;
                return Ok(());
            }
            self.stats.rejected += 1;
            rejected_last = true;
            self.h = if err.is_finite() { h / (1.0 / 0.333f64).min(fac11 / 0.9) } else { 0.1 * h };
        }
    }

    fn try_step(&mut self, h: f64) -> f64 {
        self.stage(1, C2, h, &[(0, A21)]);
        self.stage(2, C3, h, &[(0, A31), (1, A32)]);
        self.stage(3, C4, h, &[(0, A41), (2, A43)]);
        self.stage(4, C5, h, &[(0, A51), (2, A53), (3, A54)]);
        self.stage(5, C6, h, &[(0, A61), (3, A64), (4, A65)]);
        self.stage(6, C7, h, &[(0, A71), (3, A74), (4, A75), (5, A76)]);
        self.stage(7, C8, h, &[(0, A81), (3, A84), (4, A85), (5, A86), (6, A87)]);
        self.stage(8, C9, h, &[(0, A91), (3, A94), (4, A95), (5, A96), (6, A97), (7, A98)]);
        self.stage(9, C10, h, &[(0, A101), (3, A104), (4, A105), (5, A106), (6, A107), (7, A108), (8, A109)]);
        self.stage(
            10,
            C11,
            h,
            &[(0, A111), (3, A114), (4, A115), (5, A116), (6, A117), (7, A118), (8, A119), (9, A1110)],
        );
        self.stage(
            11,
            1.0,
            h,
            &[(0, A121), (3, A124), (4, A125), (5, A126), (6, A127), (7, A128), (8, A129), (9, A1210), (10, A1211)],
        );
        let n = self.n;
        let k = &self.k;
        let (mut err, mut err2) = (0.0, 0.0);
        for i in 0..n {
            let inc = B1 * k[0][i] + B6 * k[5][i] + B7 * k[6][i] + B8 * k[7][i] + B9 * k[8][i]
                + B10 * k[9][i]
                + B11 * k[10][i]
                + B12 * k[11][i];
            let yn = self.y[i] + h * inc;
            self.ynew[i] = yn;
            let sk = self.cfg.abs_tol + self.cfg.rel_tol * self.y[i].abs().max(yn.abs());
            let e2 = inc - BHH1 * k[0][i] - BHH2 * k[8][i] - BHH3 * k[11][i];
            err2 += (e2 / sk).powi(2);
            let e1 = ER1 * k[0][i] + ER6 * k[5][i] + ER7 * k[6][i] + ER8 * k[7][i] + ER9 * k[8][i]
                + ER10 * k[9][i]
                + ER11 * k[10][i]
                + ER12 * k[11][i];
            err += (e1 / sk).powi(2);
        }
        let mut deno = err + 0.01 * err2;
        if deno <= 0.0 {
            deno = 1.0;
        }
        h.abs() * err * (1.0 / (deno * n as f64)).sqrt()
    }

    /// Dense output of the last accepted step, computed on first request.
    pub fn dense(&mut self) -> &DenseOutput {
        if !self.dense_valid {
            self.build_dense();
        }
        &self.dense
    }

    fn build_dense(&mut self) {
        assert!(self.swap_pending, "dense output requested before any step");
        let n = self.n;
        let h = self.h_old;
        // stages 14-16 evaluated from the start of the step
        let (t_cur, y_cur) = (self.t, std::mem::take(&mut self.y));
        self.t = self.t_old;
        std::mem::swap(&mut self.y, &mut self.y_old);
        self.stage(13, C14, h, &[(0, A141), (6, A147), (7, A148), (8, A149), (9, A1410), (10, A1411), (11, A1412), (12, A1413)]);
        self.stage(14, C15, h, &[(0, A151), (5, A156), (6, A157), (7, A158), (10, A1511), (11, A1512), (12, A1513), (13, A1514)]);
        self.stage(15, C16, h, &[(0, A161), (5, A166), (6, A167), (7, A168), (8, A169), (12, A1613), (13, A1614), (14, A1615)]);
        std::mem::swap(&mut self.y, &mut self.y_old);
        self.y = y_cur;
        self.t = t_cur;
        self.stats.evals += 3;
        let k = &self.k;
        let d = &mut self.dense;
        d.t0 = self.t_old;
        d.h = h;
        for i in 0..n {
            let ydiff = self.y[i] - self.y_old[i];
            let bspl = h * k[0][i] - ydiff;
            d.cont[i] = self.y_old[i];
            d.cont[n + i] = ydiff;
            d.cont[2 * n + i] = bspl;
            d.cont[3 * n + i] = ydiff - h * k[12][i] - bspl;
            let lin = |c: [f64; 12]| -> f64 {
                c[0] * k[0][i] + c[1] * k[5][i] + c[2] * k[6][i] + c[3] * k[7][i] + c[4] * k[8][i]
                    + c[5] * k[9][i]
                    + c[6] * k[10][i]
                    + c[7] * k[11][i]
                    + c[8] * k[12][i]
                    + c[9] * k[13][i]
                    + c[10] * k[14][i]
                    + c[11] * k[15][i]
            };
            d.cont[4 * n + i] = h * lin([D41, D46, D47, D48, D49, D410, D411, D412, D413, D414, D415, D416]);
            d.cont[5 * n + i] = h * lin([D51, D56, D57, D58, D59, D510, D511, D512, D513, D514, D515, D516]);
            d.cont[6 * n + i] = h * lin([D61, D66, D67, D68, D69, D610, D611, D612, D613, D614, D615, D616]);
            d.cont[7 * n + i] = h * lin([D71, D76, D77, D78, D79, D710, D711, D712, D713, D714, D715, D716]);
        }
        self.dense_valid = true;
    }
}
