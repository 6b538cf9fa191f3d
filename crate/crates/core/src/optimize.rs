//! Derivative-free Nelder–Mead simplex minimisation.

/// Outcome of a simplex run.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum<const N: usize> {
    pub x: [f64; N],
    pub value: f64,
    pub iterations: usize,
    /// True when every coordinate's simplex extent fell below its tolerance.
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct NelderMead<const N: usize> {
    /// Offsets used to build the initial simplex around the start point.
    pub initial_step: [f64; N],
    /// Per-coordinate extent below which the simplex counts as collapsed.
    pub tolerance: [f64; N],
    pub max_iters: usize,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

impl<const N: usize> NelderMead<N> {
    pub fn new(initial_step: [f64; N], tolerance: [f64; N], max_iters: usize) -> Self {
        Self {
            initial_step,
            tolerance,
            max_iters,
        }
    }

    /// Minimises `f` from `start`. `f` may return `+inf` to reject a point.
    ///
    /// Ties are broken by vertex order, so the run is fully deterministic.
    pub fn minimize<F>(&self, start: [f64; N], mut f: F) -> Minimum<N>
    where
        F: FnMut(&[f64; N]) -> f64,
    {
        let mut simplex: Vec<([f64; N], f64)> = Vec::with_capacity(N + 1);
        let f0 = f(&start);
        simplex.push((start, f0));
        for i in 0..N {
            let mut p = start;
            p[i] += self.initial_step[i];
            let fp = f(&p);
            simplex.push((p, fp));
        }

        let mut iterations = 0;
        let mut converged = false;
        loop {
            // stable sort keeps earlier vertices ahead on ties
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            if self.collapsed(&simplex) {
                converged = true;
                break;
            }
            if iterations >= self.max_iters {
                break;
            }
            iterations += 1;

            let mut centroid = [0.0; N];
            for (p, _) in &simplex[..N] {
                for (c, v) in centroid.iter_mut().zip(p) {
                    *c += v / N as f64;
                }
            }
            let worst = simplex[N];
            let along = |t: f64| -> [f64; N] {
                let mut p = [0.0; N];
                for i in 0..N {
                    p[i] = centroid[i] + t * (worst.0[i] - centroid[i]);
                }
                p
            };

            let xr = along(-REFLECT);
            let fr = f(&xr);
            let best = simplex[0].1;
            let second_worst = simplex[N - 1].1;

            if fr < best {
                let xe = along(-EXPAND);
                let fe = f(&xe);
                simplex[N] = if fe < fr { (xe, fe) } else { (xr, fr) };
                continue;
            }
            if fr < second_worst {
                simplex[N] = (xr, fr);
                continue;
            }
            // contraction, outside when the reflection beat the worst vertex
            let (xc, fc) = if fr < worst.1 {
                let xc = along(-CONTRACT);
                (xc, f(&xc))
            } else {
                let xc = along(CONTRACT);
                (xc, f(&xc))
            };
            if fc < worst.1.min(fr) {
                simplex[N] = (xc, fc);
                continue;
            }
            let anchor = simplex[0].0;
            for vertex in simplex.iter_mut().skip(1) {
                for (v, a) in vertex.0.iter_mut().zip(&anchor) {
                    *v = a + SHRINK * (*v - a);
                }
                vertex.1 = f(&vertex.0);
            }
        }

        let (x, value) = simplex[0];
        Minimum {
            x,
            value,
            iterations,
            converged,
        }
    }

    fn collapsed(&self, simplex: &[([f64; N], f64)]) -> bool {
        (0..N).all(|i| {
            let (lo, hi) = simplex
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (p, _)| {
                    (lo.min(p[i]), hi.max(p[i]))
                });
            hi - lo < self.tolerance[i]
        })
    }
}
