//! Exact solution of the 1D Riemann problem for an ideal gas, following the
//! classical two-rarefaction/two-shock pressure iteration. Used only as an
//! independent reference for the finite-volume solver.

#[derive(Clone, Copy, Debug)]
pub struct PrimState {
    pub rho: f64,
    pub u: f64,
    pub p: f64,
}

pub struct ExactRiemann {
    left: PrimState,
    right: PrimState,
    gamma: f64,
    p_star: f64,
    u_star: f64,
}

impl ExactRiemann {
    pub fn new(left: PrimState, right: PrimState, gamma: f64) -> Self {
        let mut s = Self {
            left,
            right,
            gamma,
            p_star: 0.0,
            u_star: 0.0,
        };
        s.solve_star();
        s
    }

    fn sound(&self, w: &PrimState) -> f64 {
        (self.gamma * w.p / w.rho).sqrt()
    }

    /// Pressure function f_K(p) and its derivative for one side.
    fn side(&self, p: f64, w: &PrimState) -> (f64, f64) {
        let g = self.gamma;
        let c = self.sound(w);
        if p > w.p {
            let a = 2.0 / ((g + 1.0) * w.rho);
            let b = (g - 1.0) / (g + 1.0) * w.p;
            let sq = (a / (p + b)).sqrt();
            let f = (p - w.p) * sq;
            let df = sq * (1.0 - 0.5 * (p - w.p) / (b + p));
            (f, df)
        } else {
            let ratio = p / w.p;
            let f = 2.0 * c / (g - 1.0) * (ratio.powf((g - 1.0) / (2.0 * g)) - 1.0);
            let df = 1.0 / (w.rho * c) * ratio.powf(-(g + 1.0) / (2.0 * g));
            (f, df)
        }
    }

    fn solve_star(&mut self) {
        let (l, r) = (self.left, self.right);
        let du = r.u - l.u;
        let mut p = 0.5 * (l.p + r.p);
        for _ in 0..200 {
            let (fl, dfl) = self.side(p, &l);
            let (fr, dfr) = self.side(p, &r);
            let next = (p - (fl + fr + du) / (dfl + dfr)).max(1e-12);
            let change = 2.0 * (next - p).abs() / (next + p);
            p = next;
            if change < 1e-15 {
                break;
            }
        }
        let (fl, _) = self.side(p, &l);
        let (fr, _) = self.side(p, &r);
        self.p_star = p;
        self.u_star = 0.5 * (l.u + r.u) + 0.5 * (fr - fl);
    }

    pub fn star(&self) -> (f64, f64) {
        (self.p_star, self.u_star)
    }

    /// Solution at similarity coordinate `s = (x - x0) / t`.
    pub fn sample(&self, s: f64) -> PrimState {
        let g = self.gamma;
        let (ps, us) = (self.p_star, self.u_star);
        if s <= us {
            let w = self.left;
            let c = self.sound(&w);
            if ps > w.p {
                let ratio = ps / w.p;
                let shock = w.u
                    - c * ((g + 1.0) / (2.0 * g) * ratio + (g - 1.0) / (2.0 * g)).sqrt();
                if s <= shock {
                    w
                } else {
                    let gm = (g - 1.0) / (g + 1.0);
                    PrimState {
                        rho: w.rho * (ratio + gm) / (gm * ratio + 1.0),
                        u: us,
                        p: ps,
                    }
                }
            } else {
                let head = w.u - c;
                let c_star = c * (ps / w.p).powf((g - 1.0) / (2.0 * g));
                let tail = us - c_star;
                if s <= head {
                    w
                } else if s >= tail {
                    PrimState {
                        rho: w.rho * (ps / w.p).powf(1.0 / g),
                        u: us,
                        p: ps,
                    }
                } else {
                    let k = 2.0 / (g + 1.0) + (g - 1.0) / ((g + 1.0) * c) * (w.u - s);
                    PrimState {
                        rho: w.rho * k.powf(2.0 / (g - 1.0)),
                        u: 2.0 / (g + 1.0) * (c + (g - 1.0) / 2.0 * w.u + s),
                        p: w.p * k.powf(2.0 * g / (g - 1.0)),
                    }
                }
            }
        } else {
            let w = self.right;
            let c = self.sound(&w);
            if ps > w.p {
                let ratio = ps / w.p;
                let shock = w.u
                    + c * ((g + 1.0) / (2.0 * g) * ratio + (g - 1.0) / (2.0 * g)).sqrt();
                if s >= shock {
                    w
                } else {
                    let gm = (g - 1.0) / (g + 1.0);
                    PrimState {
                        rho: w.rho * (ratio + gm) / (gm * ratio + 1.0),
                        u: us,
                        p: ps,
                    }
                }
            } else {
                let head = w.u + c;
                let c_star = c * (ps / w.p).powf((g - 1.0) / (2.0 * g));
                let tail = us + c_star;
                if s >= head {
                    w
                } else if s <= tail {
                    PrimState {
                        rho: w.rho * (ps / w.p).powf(1.0 / g),
                        u: us,
                        p: ps,
                    }
                } else {
                    let k = 2.0 / (g + 1.0) - (g - 1.0) / ((g + 1.0) * c) * (w.u - s);
                    PrimState {
                        rho: w.rho * k.powf(2.0 / (g - 1.0)),
                        u: 2.0 / (g + 1.0) * (-c + (g - 1.0) / 2.0 * w.u + s),
                        p: w.p * k.powf(2.0 * g / (g - 1.0)),
                    }
                }
            }
        }
    }
}

/// Sod's shock tube.
pub fn sod() -> ExactRiemann {
    ExactRiemann::new(
        PrimState { rho: 1.0, u: 0.0, p: 1.0 },
        PrimState { rho: 0.125, u: 0.0, p: 0.1 },
        1.4,
    )
}
