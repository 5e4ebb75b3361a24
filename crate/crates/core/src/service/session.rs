use std::sync::Arc;
use std::time::SystemTime;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{self, AnalysisError, Manipulation, Ranking};
use crate::jsonfmt;
use crate::koopman::KoopmanModel;
use crate::numerics::Matrix;
use crate::trajgen::Scenario;

/// One undoable step applied to a session's operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum SessionEdit {
    Manipulate(Manipulation),
    Reduce { k: usize },
}

impl SessionEdit {
    /// Result of the edit on `k`, plus whether the eigenbasis was trusted.
    pub fn apply(&self, k: &Matrix) -> Result<(Matrix, bool), AnalysisError> {
        match self {
            SessionEdit::Manipulate(m) => analysis::manipulate(k, m).map(|r| (r.k, r.trusted)),
            SessionEdit::Reduce { k: keep } => analysis::reduce_model(k, *keep, &Ranking::Magnitude).map(|r| (r.k, r.trusted)),
        }
    }
}

/// Applies `edits` in order to `base`.
pub fn replay(base: &Matrix, edits: &[SessionEdit]) -> Result<Matrix, AnalysisError> {
    edits.iter().try_fold(base.clone(), |k, e| e.apply(&k).map(|r| r.0))
}

/// Hash of the base operator and the edit list.
pub fn history_hash(base: &Matrix, edits: &[SessionEdit]) -> String {
    let mut h = Sha256::new();
    h.update(analysis::matrix_fingerprint(base).as_bytes());
    for e in edits {
        h.update(jsonfmt::to_string(e).expect("edits serialize").as_bytes());
        h.update(b"\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug)]
pub struct Session {
    pub id: String,
    pub model_name: String,
    pub base: Arc<KoopmanModel>,
    pub scenario: Option<Scenario>,
    pub history: Vec<SessionEdit>,
    /// Current operator; always `replay(base.k, history)`.
    pub k: Matrix,
    pub trusted: bool,
    pub created: SystemTime,
}

impl Session {
    pub fn new(id: String, model_name: String, base: Arc<KoopmanModel>, scenario: Option<Scenario>) -> Self {
        let k = base.k.clone();
        Self { id, model_name, base, scenario, history: Vec::new(), k, trusted: true, created: SystemTime::now() }
    }

    pub fn hash(&self) -> String {
        history_hash(&self.base.k, &self.history)
    }

    pub fn push(&mut self, edit: SessionEdit) -> Result<(), AnalysisError> {
        let (k, trusted) = edit.apply(&self.k)?;
        self.k = k;
        self.trusted = trusted;
        self.history.push(edit);
        Ok(())
    }

    /// Drops the last edit and rebuilds the operator from the base.
    /// Returns false when there was nothing to undo.
    pub fn undo(&mut self) -> Result<bool, AnalysisError> {
        if self.history.pop().is_none() {
            return Ok(false);
        }
        self.k = replay(&self.base.k, &self.history)?;
        self.trusted = true;
        Ok(true)
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            id: self.id.clone(),
            model: self.model_name.clone(),
            scenario: self.scenario,
            history: self.history.clone(),
            history_hash: self.hash(),
        }
    }
}

/// On-disk form of a session: enough to replay it onto its base model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub id: String,
    pub model: String,
    pub scenario: Option<Scenario>,
    pub history: Vec<SessionEdit>,
    pub history_hash: String,
}
