use crate::autodiff::{AutodiffError, Tape, Var};

use super::{Decoder, Encoder, KoopmanError, KoopmanModel, Mlp, MlpVars};

/// Tape handles for a trainable model, in the order of
/// [`KoopmanModel::parameters`].
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub encoder: MlpVars,
    pub decoder: MlpVars,
    pub input_map: Option<MlpVars>,
    pub k: Var,
    pub k_u: Var,
}

impl ModelVars {
    pub fn bind(model: &KoopmanModel, vars: &[Var]) -> Result<Self, KoopmanError> {
        let (Encoder::Mlp(enc), Decoder::Mlp(dec)) = (&model.encoder, &model.decoder) else {
            return Err(KoopmanError::Config("dictionary models have no trainable perceptrons".into()));
        };
        let mut it = vars.iter().copied();
        let mut take = |m: &Mlp| -> Option<MlpVars> {
            let layers = (0..m.layers.len()).map(|_| Some((it.next()?, it.next()?))).collect::<Option<_>>()?;
            Some(MlpVars { layers, output: m.output })
        };
        let bad = || KoopmanError::Shape("variable list does not match the model".into());
        let encoder = take(enc).ok_or_else(bad)?;
        let decoder = take(dec).ok_or_else(bad)?;
        let input_map = match &model.input_map {
            Some(m) => Some(take(m).ok_or_else(bad)?),
            None => None,
        };
        let k = it.next().ok_or_else(bad)?;
        let k_u = it.next().ok_or_else(bad)?;
        Ok(Self { encoder, decoder, input_map, k, k_u })
    }

    pub fn encode(&self, tape: &mut Tape, states: Var) -> Result<Var, AutodiffError> {
        self.encoder.forward(tape, states)
    }

    /// Decoded states, squashed into `(-1, 1)` by the output tanh.
    pub fn decode(&self, tape: &mut Tape, g: Var) -> Result<Var, AutodiffError> {
        self.decoder.forward(tape, g)
    }

    /// `None` when inputs are disabled.
    pub fn input_map(&self, tape: &mut Tape, states: Var) -> Result<Option<Var>, AutodiffError> {
        self.input_map.as_ref().map(|m| m.forward(tape, states)).transpose()
    }

    pub fn step(&self, tape: &mut Tape, g: Var, u: Option<Var>) -> Result<Var, AutodiffError> {
        let kg = tape.matmul(self.k, g)?;
        match u {
            Some(u) => {
                let ku = tape.matmul(self.k_u, u)?;
                tape.add(kg, ku)
            }
            None => Ok(kg),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::KoopmanConfig;
    use super::*;
    use crate::numerics::Matrix;

    #[test]
    fn tape_path_matches_inference_path() {
        let cfg = KoopmanConfig { state_delays: 2, obs_dim: 4, input_dim: 2, hidden: 5, depth: 4, inputs_enabled: true };
        let mut model = KoopmanModel::new(cfg, 3).unwrap();
        model.k = Matrix::from_fn(4, 4, |i, j| 0.2 * ((i + 2 * j) as f64).cos());
        let s = Matrix::from_fn(8, 3, |i, j| ((i * 3 + j) as f64 * 0.21).sin() * 0.8);

        let mut tape = Tape::new();
        let vars = tape.register(&model.parameters());
        let mv = ModelVars::bind(&model, &vars).unwrap();
        let sv = tape.leaf(s.clone());
        let g = mv.encode(&mut tape, sv).unwrap();
        let u = mv.input_map(&mut tape, sv).unwrap();
        let g1 = mv.step(&mut tape, g, u).unwrap();
        let d = mv.decode(&mut tape, g1).unwrap();

        let pg = model.encode_batch(&s);
        let pg1 = model.step_batch(&pg, &model.input_map_batch(&s));
        let pd = model.decode_batch(&pg1);
        assert!(tape.value(g).sub(&pg).unwrap().max_abs() < 1e-14);
        assert!(tape.value(g1).sub(&pg1).unwrap().max_abs() < 1e-14);
        assert!(tape.value(d).sub(&pd).unwrap().max_abs() < 1e-14);
    }
}
