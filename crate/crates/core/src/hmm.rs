//! Hidden Markov models over telemetry emission symbols: scaled forward
//! scoring, Baum–Welch training and percentile threshold calibration for
//! omission detection.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{quantile, StatsError};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const ROW_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum HmmError {
    #[error("model needs at least one state and one symbol")]
    Empty,
    #[error("{matrix} has wrong shape")]
    Shape { matrix: &'static str },
    #[error("{matrix} row {row} is not a probability distribution")]
    NotStochastic { matrix: &'static str, row: usize },
    #[error("unknown symbol {0}")]
    UnknownSymbol(String),
    #[error("empty sequence")]
    EmptySequence,
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("sequence has zero probability under the model")]
    Impossible,
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("model file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HmmModel {
    pub states: Vec<String>,
    pub symbols: Vec<String>,
    pub initial: Array1<f64>,
    pub transition: Array2<f64>,
    pub emission: Array2<f64>,
}

fn check_dist<'a>(
    rows: impl Iterator<Item = ndarray::ArrayView1<'a, f64>>,
    matrix: &'static str,
) -> Result<(), HmmError> {
    for (row, r) in rows.enumerate() {
        let ok = r.iter().all(|&p| p.is_finite() && p >= 0.0) && (r.sum() - 1.0).abs() <= ROW_TOL;
        if !ok {
            return Err(HmmError::NotStochastic { matrix, row });
        }
    }
    Ok(())
}

impl HmmModel {
    pub fn new(
        states: Vec<String>,
        symbols: Vec<String>,
        initial: Array1<f64>,
        transition: Array2<f64>,
        emission: Array2<f64>,
    ) -> Result<Self, HmmError> {
        let m = Self {
            states,
            symbols,
            initial,
            transition,
            emission,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), HmmError> {
        let n = self.states.len();
        let k = self.symbols.len();
        if n == 0 || k == 0 {
            return Err(HmmError::Empty);
        }
        if self.initial.len() != n {
            return Err(HmmError::Shape { matrix: "initial" });
        }
        if self.transition.dim() != (n, n) {
            return Err(HmmError::Shape {
                matrix: "transition",
            });
        }
        if self.emission.dim() != (n, k) {
            return Err(HmmError::Shape { matrix: "emission" });
        }
        check_dist(std::iter::once(self.initial.view()), "initial")?;
        check_dist(self.transition.rows().into_iter(), "transition")?;
        check_dist(self.emission.rows().into_iter(), "emission")?;
        Ok(())
    }

    /// Row-normalised strictly positive random parameters.
    pub fn random<R: Rng>(states: Vec<String>, symbols: Vec<String>, rng: &mut R) -> Self {
        let n = states.len();
        let k = symbols.len();
        let mut draw = |rows: usize, cols: usize| {
            let mut a = Array2::from_shape_fn((rows, cols), |_| rng.gen_range(0.1..1.0));
            for mut r in a.rows_mut() {
                let s = r.sum();
                r.mapv_inplace(|x| x / s);
            }
            a
        };
        let initial = draw(1, n).row(0).to_owned();
        let transition = draw(n, n);
        let emission = draw(n, k);
        Self {
            states,
            symbols,
            initial,
            transition,
            emission,
        }
    }

    pub fn symbol_index(&self, s: &str) -> Option<usize> {
        self.symbols.iter().position(|x| x == s)
    }

    pub fn encode<S: AsRef<str>>(&self, seq: &[S]) -> Result<Vec<usize>, HmmError> {
        seq.iter()
            .map(|s| {
                self.symbol_index(s.as_ref())
                    .ok_or_else(|| HmmError::UnknownSymbol(s.as_ref().to_string()))
            })
            .collect()
    }

    /// log P(obs | model) via the scaled forward recursion. Returns −∞ for
    /// sequences the model cannot produce.
    pub fn forward_loglik(&self, obs: &[usize]) -> Result<f64, HmmError> {
        if obs.is_empty() {
            return Err(HmmError::EmptySequence);
        }
        if let Some(&bad) = obs.iter().find(|&&o| o >= self.symbols.len()) {
            return Err(HmmError::UnknownSymbol(format!("#{bad}")));
        }
        let mut alpha = &self.initial * &self.emission.column(obs[0]);
        let mut ll = 0.0;
        for t in 0.. {
            let c = alpha.sum();
            if c <= 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            ll += c.ln();
            alpha /= c;
            let Some(&o) = obs.get(t + 1) else { break };
            alpha = alpha.dot(&self.transition) * self.emission.column(o);
        }
        Ok(ll)
    }

    pub fn loglik_symbols<S: AsRef<str>>(&self, seq: &[S]) -> Result<f64, HmmError> {
        self.forward_loglik(&self.encode(seq)?)
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            states: self.states.clone(),
            symbols: self.symbols.clone(),
            initial: self.initial.to_vec(),
            transition: self
                .transition
                .rows()
                .into_iter()
                .map(|r| r.to_vec())
                .collect(),
            emission: self
                .emission
                .rows()
                .into_iter()
                .map(|r| r.to_vec())
                .collect(),
        }
    }

    pub fn from_file(f: ModelFile) -> Result<Self, HmmError> {
        if f.format_version != MODEL_FORMAT_VERSION {
            return Err(HmmError::Format(format!(
                "unsupported version {}",
                f.format_version
            )));
        }
        let to2 = |rows: Vec<Vec<f64>>, cols: usize, matrix: &'static str| {
            let n = rows.len();
            if rows.iter().any(|r| r.len() != cols) {
                return Err(HmmError::Shape { matrix });
            }
            Array2::from_shape_vec((n, cols), rows.into_iter().flatten().collect())
                .map_err(|_| HmmError::Shape { matrix })
        };
        let n = f.states.len();
        let k = f.symbols.len();
        let transition = to2(f.transition, n, "transition")?;
        let emission = to2(f.emission, k, "emission")?;
        Self::new(
            f.states,
            f.symbols,
            Array1::from(f.initial),
            transition,
            emission,
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, HmmError> {
        let f: ModelFile =
            serde_json::from_str(text).map_err(|e| HmmError::Format(e.to_string()))?;
        Self::from_file(f)
    }
}

/// Persisted model. Floats are written with round-trip precision.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub states: Vec<String>,
    pub symbols: Vec<String>,
    pub initial: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
    pub emission: Vec<Vec<f64>>,
}

/// Corpus text: one sequence per line, symbols separated by whitespace.
pub fn parse_corpus(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect::<Vec<_>>())
        .filter(|s| !s.is_empty())
        .collect()
}

pub fn format_corpus<S: AsRef<str>>(seqs: &[Vec<S>]) -> String {
    let mut out = String::new();
    for s in seqs {
        let line: Vec<&str> = s.iter().map(AsRef::as_ref).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

struct Expectations {
    ll: f64,
    initial: Array1<f64>,
    trans_num: Array2<f64>,
    trans_den: Array1<f64>,
    emit_num: Array2<f64>,
    emit_den: Array1<f64>,
}

fn e_step(m: &HmmModel, corpus: &[Vec<usize>]) -> Result<Expectations, HmmError> {
    let n = m.states.len();
    let k = m.symbols.len();
    let mut ex = Expectations {
        ll: 0.0,
        initial: Array1::zeros(n),
        trans_num: Array2::zeros((n, n)),
        trans_den: Array1::zeros(n),
        emit_num: Array2::zeros((n, k)),
        emit_den: Array1::zeros(n),
    };
    for obs in corpus {
        let t_len = obs.len();
        if t_len == 0 {
            return Err(HmmError::EmptySequence);
        }
        let mut alpha = Array2::<f64>::zeros((t_len, n));
        let mut scale = vec![0.0; t_len];
        let mut a = &m.initial * &m.emission.column(obs[0]);
        for t in 0..t_len {
            if t > 0 {
                a = alpha.row(t - 1).dot(&m.transition) * m.emission.column(obs[t]);
            }
            let c = a.sum();
            if c <= 0.0 {
                return Err(HmmError::Impossible);
            }
            scale[t] = c;
            alpha.row_mut(t).assign(&(&a / c));
        }
        ex.ll += scale.iter().map(|c| c.ln()).sum::<f64>();

        let mut beta = Array2::<f64>::zeros((t_len, n));
        beta.row_mut(t_len - 1).fill(1.0);
        for t in (0..t_len - 1).rev() {
            let next = &m.emission.column(obs[t + 1]) * &beta.row(t + 1);
            let b = m.transition.dot(&next) / scale[t + 1];
            beta.row_mut(t).assign(&b);
        }
        for t in 0..t_len {
            let gamma = &alpha.row(t) * &beta.row(t);
            if t == 0 {
                ex.initial += &gamma;
            }
            for i in 0..n {
                ex.emit_num[[i, obs[t]]] += gamma[i];
                ex.emit_den[i] += gamma[i];
            }
            if t + 1 < t_len {
                ex.trans_den += &gamma;
                let next = &m.emission.column(obs[t + 1]) * &beta.row(t + 1);
                for i in 0..n {
                    for j in 0..n {
                        ex.trans_num[[i, j]] +=
                            alpha[[t, i]] * m.transition[[i, j]] * next[j] / scale[t + 1];
                    }
                }
            }
        }
    }
    Ok(ex)
}

fn m_step(m: &HmmModel, ex: &Expectations, n_seqs: usize) -> HmmModel {
    let mut next = m.clone();
    next.initial = &ex.initial / n_seqs as f64;
    for i in 0..m.states.len() {
        // A state never visited keeps its previous row.
        if ex.trans_den[i] > 0.0 {
            let row = ex.trans_num.row(i).to_owned();
            let s = row.sum();
            next.transition.row_mut(i).assign(&(row / s));
        }
        if ex.emit_den[i] > 0.0 {
            let row = ex.emit_num.row(i).to_owned();
            let s = row.sum();
            next.emission.row_mut(i).assign(&(row / s));
        }
    }
    next
}

#[derive(Debug, Clone)]
pub struct Training {
    pub model: HmmModel,
    pub initial_loglik: f64,
    /// Corpus log-likelihood after each iteration.
    pub trace: Vec<f64>,
}

pub fn baum_welch_train(
    corpus: &[Vec<usize>],
    init: &HmmModel,
    max_iters: usize,
    tol: f64,
) -> Result<Training, HmmError> {
    init.validate()?;
    if corpus.is_empty() {
        return Err(HmmError::EmptyCorpus);
    }
    let mut model = init.clone();
    let mut ex = e_step(&model, corpus)?;
    let initial_loglik = ex.ll;
    let mut prev = ex.ll;
    let mut trace = Vec::with_capacity(max_iters);
    for _ in 0..max_iters {
        let next = m_step(&model, &ex, corpus.len());
        ex = e_step(&next, corpus)?;
        model = next;
        trace.push(ex.ll);
        if ex.ll - prev < tol {
            break;
        }
        prev = ex.ll;
    }
    Ok(Training {
        model,
        initial_loglik,
        trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmissionThreshold {
    pub theta: f64,
    pub calibration_quantile: f64,
}

pub const MIN_CALIBRATION_SEQUENCES: usize = 20;

/// θ = quantile (linear interpolation) of length-normalised training
/// log-likelihoods.
pub fn calibrate_threshold(
    model: &HmmModel,
    corpus: &[Vec<usize>],
    q: f64,
) -> Result<OmissionThreshold, HmmError> {
    if corpus.len() < MIN_CALIBRATION_SEQUENCES {
        return Err(StatsError::TooFew {
            need: MIN_CALIBRATION_SEQUENCES,
            got: corpus.len(),
        }
        .into());
    }
    let scores = corpus
        .iter()
        .map(|s| Ok(model.forward_loglik(s)? / s.len() as f64))
        .collect::<Result<Vec<_>, HmmError>>()?;
    Ok(OmissionThreshold {
        theta: quantile(&scores, q)?,
        calibration_quantile: q,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OmissionReason {
    LowLikelihood,
    OutOfAlphabet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OmissionVerdict {
    Nominal {
        score: f64,
    },
    OmissionSuspected {
        reason: OmissionReason,
        score: Option<f64>,
    },
}

impl OmissionVerdict {
    pub fn is_alert(&self) -> bool {
        matches!(self, OmissionVerdict::OmissionSuspected { .. })
    }
}

pub fn score_for_omission<S: AsRef<str>>(
    model: &HmmModel,
    threshold: &OmissionThreshold,
    seq: &[S],
) -> Result<OmissionVerdict, HmmError> {
    let obs = match model.encode(seq) {
        Ok(o) => o,
        Err(HmmError::UnknownSymbol(_)) => {
            return Ok(OmissionVerdict::OmissionSuspected {
                reason: OmissionReason::OutOfAlphabet,
                score: None,
            })
        }
        Err(e) => return Err(e),
    };
    let score = model.forward_loglik(&obs)? / obs.len() as f64;
    Ok(if score < threshold.theta {
        OmissionVerdict::OmissionSuspected {
            reason: OmissionReason::LowLikelihood,
            score: Some(score),
        }
    } else {
        OmissionVerdict::Nominal { score }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn names(p: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{p}{i}")).collect()
    }

    #[test]
    fn certain_model_has_zero_loglik() {
        let m = HmmModel::new(
            names("s", 1),
            names("o", 1),
            array![1.0],
            array![[1.0]],
            array![[1.0]],
        )
        .unwrap();
        assert_eq!(m.forward_loglik(&[0, 0, 0, 0, 0]).unwrap(), 0.0);
    }

    #[test]
    fn uniform_model_closed_form() {
        let n = 3;
        let k = 5;
        let m = HmmModel::new(
            names("s", n),
            names("o", k),
            Array1::from_elem(n, 1.0 / n as f64),
            Array2::from_elem((n, n), 1.0 / n as f64),
            Array2::from_elem((n, k), 1.0 / k as f64),
        )
        .unwrap();
        let obs = [0, 4, 2, 2, 1, 3, 0];
        let expected = obs.len() as f64 * (1.0 / k as f64).ln();
        assert!((m.forward_loglik(&obs).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn invalid_models_rejected() {
        let bad = HmmModel::new(
            names("s", 1),
            names("o", 1),
            array![0.5],
            array![[1.0]],
            array![[1.0]],
        );
        assert_eq!(
            bad,
            Err(HmmError::NotStochastic {
                matrix: "initial",
                row: 0
            })
        );
        let zero_row = HmmModel::new(
            names("s", 2),
            names("o", 1),
            array![0.5, 0.5],
            array![[1.0, 0.0], [0.0, 0.0]],
            array![[1.0], [1.0]],
        );
        assert!(matches!(
            zero_row,
            Err(HmmError::NotStochastic {
                matrix: "transition",
                row: 1
            })
        ));
        assert!(HmmModel::new(
            vec![],
            vec![],
            array![],
            Array2::zeros((0, 0)),
            Array2::zeros((0, 0))
        )
        .is_err());
    }

    #[test]
    fn unknown_symbols() {
        let m = HmmModel::new(
            names("s", 1),
            names("o", 1),
            array![1.0],
            array![[1.0]],
            array![[1.0]],
        )
        .unwrap();
        assert_eq!(
            m.loglik_symbols(&["zz"]),
            Err(HmmError::UnknownSymbol("zz".into()))
        );
        assert_eq!(m.forward_loglik(&[]), Err(HmmError::EmptySequence));
        let thr = OmissionThreshold {
            theta: -1.0,
            calibration_quantile: 0.05,
        };
        assert_eq!(
            score_for_omission(&m, &thr, &["zz"]).unwrap(),
            OmissionVerdict::OmissionSuspected {
                reason: OmissionReason::OutOfAlphabet,
                score: None
            }
        );
        assert!(!score_for_omission(&m, &thr, &["o0"]).unwrap().is_alert());
    }

    #[test]
    fn calibration_needs_twenty() {
        let m = HmmModel::new(
            names("s", 1),
            names("o", 1),
            array![1.0],
            array![[1.0]],
            array![[1.0]],
        )
        .unwrap();
        let corpus = vec![vec![0usize]; 19];
        assert!(calibrate_threshold(&m, &corpus, 0.05).is_err());
        let corpus = vec![vec![0usize]; 20];
        assert_eq!(calibrate_threshold(&m, &corpus, 0.05).unwrap().theta, 0.0);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut rng = <rand_chacha::ChaCha20Rng as rand::SeedableRng>::seed_from_u64(3);
        let m = HmmModel::random(names("s", 3), names("o", 4), &mut rng);
        let back = HmmModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert!(HmmModel::from_json("{\"format_version\":9}").is_err());
    }

    #[test]
    fn corpus_format_round_trip() {
        let seqs = vec![vec!["a", "b"], vec!["c"]];
        let text = format_corpus(&seqs);
        assert_eq!(text, "a b\nc\n");
        assert_eq!(
            parse_corpus(&text),
            vec![vec!["a".to_string(), "b".into()], vec!["c".into()]]
        );
    }
}
