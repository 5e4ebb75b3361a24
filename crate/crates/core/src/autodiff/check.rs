use serde::Serialize;

use super::{AutodiffError, ParameterSet, Tape, Var};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: f64,
    /// Pass threshold on the relative error.
    pub tol: f64,
    /// Magnitudes below this are compared absolutely: the relative error
    /// is `|a - n| / max(|a|, |n|, floor)`.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { h: 1e-5, tol: 1e-4, floor: 1e-3 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Entry at which the maximum occurred, as `(row, col)`.
    pub worst: (usize, usize),
    pub skipped: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().filter(|p| !p.skipped).map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

/// Compares tape gradients of the scalar `f` against central finite
/// differences for every entry of every parameter. Parameters named in
/// `skip` are reported but not compared.
pub fn grad_check<F>(
    params: &ParameterSet,
    f: F,
    opts: GradCheckOptions,
    skip: &[&str],
) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>,
{
    let eval = |p: &ParameterSet| -> Result<f64, AutodiffError> {
        let mut tape = Tape::new();
        let vars = tape.register(p);
        let loss = f(&mut tape, &vars)?;
        Ok(tape.scalar_value(loss))
    };

    let mut tape = Tape::new();
    let vars = tape.register(params);
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut out = Vec::with_capacity(params.len());
    let mut probe = params.clone();
    for (k, (name, value)) in params.iter().enumerate() {
        if skip.contains(&name) {
            out.push(ParamCheck { name: name.into(), max_rel_error: 0.0, worst: (0, 0), skipped: true, passed: true });
            continue;
        }
        let analytic = grads.wrt(&tape, vars[k]);
        let mut worst = (0.0, (0, 0));
        for r in 0..value.rows() {
            for c in 0..value.cols() {
                let x0 = value[(r, c)];
                probe.values_mut()[k][(r, c)] = x0 + opts.h;
                let fp = eval(&probe)?;
                probe.values_mut()[k][(r, c)] = x0 - opts.h;
                let fm = eval(&probe)?;
                probe.values_mut()[k][(r, c)] = x0;
                let numeric = (fp - fm) / (2.0 * opts.h);
                let a = analytic[(r, c)];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
                if rel > worst.0 || rel.is_nan() {
                    worst = (rel, (r, c));
                }
            }
        }
        out.push(ParamCheck {
            name: name.into(),
            max_rel_error: worst.0,
            worst: worst.1,
            skipped: false,
            passed: worst.0 < opts.tol,
        });
    }
    Ok(GradCheckReport { params: out, tol: opts.tol })
}
