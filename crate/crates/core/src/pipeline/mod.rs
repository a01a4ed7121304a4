//! Batch pipeline: ingest, train, fit, evaluate, explain and embed, writing
//! stamped artifacts under the configured work directory.
//!
//! Each stage computes what it needs from earlier stages in memory. Trained
//! encoders are reused from `model_<kind>.sqcx` when the checkpoint matches
//! the current configuration.

pub mod artifact;
pub mod config;

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classical::{expand, fit_classical, ClassicalFit, ClassicalSummary};
use crate::data::{
    build_sequences, derive_first_event, derive_survival, load_records_with_report, write_outcomes, DataSummary,
    LoadReport, RecordTable, SequenceTensor, SurvivalOutcome,
};
use crate::embed::{tsne, Embedding};
use crate::encoders::{train_encoder, EncoderKind, EncoderModel, EncoderSpec, TrainReport};
use crate::error::{Error, Result};
use crate::explain::{feature_frequency, gradient_saliency, lime_batch, Explanation, SaliencyReport};
use crate::simulate::{censoring_fraction, significance_report, simulate_recurrent};
use crate::survival::{
    concordance_index, fit_cox, kaplan_meier, logrank_test, risk_groups, CoxFit, CoxSummary, LogRank, RiskSplit,
    SurvCurve,
};
use crate::tensor::Tensor;

pub use artifact::{git_hash, ArtifactWriter};
pub use config::{OutcomeRule, PipelineConfig, Source};

/// Subcommand names in execution order.
pub const STAGES: [&str; 11] = [
    "ingest",
    "simulate",
    "train",
    "features",
    "fit-cox",
    "fit-classical",
    "evaluate",
    "km",
    "explain",
    "tsne",
    "run-all",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataReport {
    pub source: Source,
    pub outcome: OutcomeRule,
    pub n_patients: usize,
    pub n_rows: usize,
    pub steps: usize,
    pub feature_names: Vec<String>,
    /// Fraction of patients whose outcome is censored.
    pub censoring_fraction: f64,
    /// Fraction of intervals with status 0.
    pub row_censoring_fraction: f64,
    pub n_events: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub summary: DataSummary,
    pub load: Option<LoadReport>,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub records: RecordTable,
    pub outcomes: Vec<SurvivalOutcome>,
    /// All patients, standardized with statistics of the training split.
    pub sequences: SequenceTensor,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub report: DataReport,
}

impl Ingested {
    pub fn train_outcomes(&self) -> Vec<SurvivalOutcome> {
        self.train_rows.iter().map(|&i| self.outcomes[i]).collect()
    }

    pub fn test_outcomes(&self) -> Vec<SurvivalOutcome> {
        self.test_rows.iter().map(|&i| self.outcomes[i]).collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainedEncoder {
    pub model: EncoderModel,
    /// `None` when loaded from a checkpoint.
    pub report: Option<TrainReport>,
}

/// Deep features of one encoder with the Cox model fitted on the training
/// split.
#[derive(Debug, Clone)]
pub struct DeepCox {
    pub kind: EncoderKind,
    pub features: Tensor,
    pub fit: CoxFit,
    /// Linear predictor for every patient.
    pub risk: Vec<f64>,
    pub c_index_train: f64,
    pub c_index_test: Option<f64>,
    /// Median split of the training patients.
    pub split: RiskSplit,
    pub logrank: Option<LogRank>,
    pub km_high: SurvCurve,
    pub km_low: SurvCurve,
}

impl DeepCox {
    pub fn label(&self) -> &'static str {
        self.kind.cox_label()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub model: String,
    pub c_index: f64,
    pub c_index_test: Option<f64>,
    pub aic: f64,
    pub log_partial_likelihood: f64,
    pub logrank_p: Option<f64>,
    pub n: usize,
    pub n_events: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rows: Vec<MetricRow>,
}

#[derive(Debug, Clone)]
pub struct ExplainOutput {
    pub explanations: Vec<Explanation>,
    pub frequency: indexmap::IndexMap<String, usize>,
    pub saliency: SaliencyReport,
}

#[derive(Serialize)]
struct FitArtifact<'a> {
    model: &'a str,
    summary: CoxSummary,
    c_index_test: Option<f64>,
    separation: bool,
    warnings: &'a [String],
}

#[derive(Serialize)]
struct ClassicalArtifact<'a> {
    #[serde(flatten)]
    summary: ClassicalSummary,
    warnings: &'a [String],
}

/// Seeded patient-level split; both index lists are sorted.
pub fn split_rows(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1.min(n), n);
    let (mut train, mut test) = (idx[..n_train].to_vec(), idx[n_train..].to_vec());
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

fn csv_bytes<F>(fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> Result<()>,
{
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        fill(&mut w)?;
        w.flush().map_err(|e| Error::Data(e.to_string()))?;
    }
    Ok(buf)
}

/// Runs stages against one configuration, caching intermediate results.
pub struct Pipeline {
    cfg: PipelineConfig,
    out: ArtifactWriter,
    ingested: Option<Ingested>,
    trained: Option<Vec<TrainedEncoder>>,
    deep: Option<Vec<DeepCox>>,
    classical: Option<Vec<ClassicalFit>>,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let out = ArtifactWriter::new(&cfg)?;
        Ok(Self {
            cfg,
            out,
            ingested: None,
            trained: None,
            deep: None,
            classical: None,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn writer(&self) -> &ArtifactWriter {
        &self.out
    }

    /// Runs a stage by its subcommand name.
    pub fn run(&mut self, stage: &str) -> Result<()> {
        match stage {
            "ingest" => self.ingest().map(drop),
            "simulate" => self.simulate(),
            "train" => self.train().map(drop),
            "features" => self.features(),
            "fit-cox" => self.fit_cox().map(drop),
            "fit-classical" => self.fit_classical().map(drop),
            "evaluate" => self.evaluate().map(drop),
            "km" => self.km(),
            "explain" => self.explain().map(drop),
            "tsne" => self.tsne().map(drop),
            "run-all" => self.run_all(),
            other => Err(Error::invalid(format!("unknown stage `{other}`"))),
        }
    }

    fn load_table(&self) -> Result<(RecordTable, Option<LoadReport>)> {
        match self.cfg.source {
            Source::File => {
                let path = self
                    .cfg
                    .input
                    .as_ref()
                    .ok_or_else(|| Error::invalid("`input` is not set"))?;
                let (table, report) = load_records_with_report(path)?;
                Ok((table, Some(report)))
            }
            Source::Simulate => Ok((simulate_recurrent(&self.cfg.sim_config())?, None)),
        }
    }

    fn compute_ingest(&self) -> Result<Ingested> {
        let (records, load) = self.load_table()?;
        let outcomes = match self.cfg.outcome_rule() {
            OutcomeRule::FirstEvent => derive_first_event(&records, &self.cfg.event_mapping())?,
            _ => derive_survival(&records, &self.cfg.event_mapping())?,
        };
        let n = outcomes.len();
        let (train_rows, test_rows) = split_rows(n, self.cfg.train_fraction, self.cfg.seed);
        let train_ids: HashSet<i64> = train_rows.iter().map(|&i| outcomes[i].patient_id).collect();
        let fitted = build_sequences(
            &records.filter_patients(&train_ids),
            self.cfg.steps,
            &self.cfg.features,
            None,
        )?;
        let sequences = build_sequences(&records, self.cfg.steps, &self.cfg.features, Some(&fitted.scaler))?;
        if sequences.patient_ids.iter().ne(outcomes.iter().map(|o| &o.patient_id)) {
            return Err(Error::Data("sequence and outcome patient order differ".into()));
        }
        let n_events = outcomes.iter().filter(|o| o.event).count();
        let report = DataReport {
            source: self.cfg.source,
            outcome: self.cfg.outcome_rule(),
            n_patients: n,
            n_rows: records.len(),
            steps: self.cfg.steps,
            feature_names: self.cfg.features.clone(),
            censoring_fraction: 1.0 - n_events as f64 / n as f64,
            row_censoring_fraction: censoring_fraction(&records),
            n_events,
            n_train: train_rows.len(),
            n_test: test_rows.len(),
            summary: records.describe(),
            load,
        };
        Ok(Ingested {
            records,
            outcomes,
            sequences,
            train_rows,
            test_rows,
            report,
        })
    }

    /// Reads or simulates the table, derives outcomes and sequences, and
    /// writes `sequences.sqcx`, `outcomes.csv`, `split.csv` and
    /// `data_report.json`.
    pub fn ingest(&mut self) -> Result<&Ingested> {
        if self.ingested.is_none() {
            let ing = self.compute_ingest().map_err(|e| e.in_stage("ingest"))?;
            self.write_ingest(&ing).map_err(|e| e.in_stage("ingest"))?;
            self.ingested = Some(ing);
        }
        Ok(self.ingested.as_ref().expect("ingested"))
    }

    fn write_ingest(&self, ing: &Ingested) -> Result<()> {
        self.out.binary("sequences.sqcx", &ing.sequences.to_bytes()?, None)?;
        let mut outcomes = Vec::new();
        write_outcomes(&ing.outcomes, &mut outcomes)?;
        self.out.text("outcomes.csv", &outcomes, &[])?;
        let split = csv_bytes(|w| {
            w.write_record(["patient_id", "split"])?;
            for (i, o) in ing.outcomes.iter().enumerate() {
                let s = if ing.train_rows.binary_search(&i).is_ok() {
                    "train"
                } else {
                    "test"
                };
                w.write_record([o.patient_id.to_string(), s.to_string()])?;
            }
            Ok(())
        })?;
        self.out.text("split.csv", &split, &[])?;
        self.out.json("data_report.json", &ing.report)?;
        Ok(())
    }

    /// Simulates a table from the `sim_*` keys and writes `simulated.csv`
    /// (readable as `input`) and `simulation_report.json`.
    pub fn simulate(&mut self) -> Result<()> {
        let run = || -> Result<()> {
            let table = simulate_recurrent(&self.cfg.sim_config())?;
            let mut body = Vec::new();
            table.write_csv(&mut body)?;
            self.out.text("simulated.csv", &body, &[])?;
            #[derive(Serialize)]
            struct SimReport {
                n_patients: usize,
                n_rows: usize,
                row_censoring_fraction: f64,
                andersen_gill: ClassicalSummary,
            }
            let report = SimReport {
                n_patients: table.n_patients(),
                n_rows: table.len(),
                row_censoring_fraction: censoring_fraction(&table),
                andersen_gill: significance_report(&table)?,
            };
            self.out.json("simulation_report.json", &report)?;
            Ok(())
        };
        run().map_err(|e| e.in_stage("simulate"))
    }

    fn encoder_spec(&self, kind: EncoderKind, ing: &Ingested) -> EncoderSpec {
        let mut spec = EncoderSpec::new(kind, ing.sequences.n_features(), ing.sequences.steps())
            .with_output(self.cfg.output_dim)
            .with_seed(self.cfg.seed)
            .with_dropout(self.cfg.dropout);
        if let Some(h) = self.cfg.hidden {
            spec = spec.with_hidden(h);
        }
        spec.positional_encoding = self.cfg.positional_encoding;
        spec
    }

    fn require_models(&self) -> Result<()> {
        if self.cfg.models.is_empty() {
            return Err(Error::invalid("nothing to run: no encoder models selected"));
        }
        Ok(())
    }

    /// Hash of everything a trained encoder depends on.
    fn training_key(&self, spec: &EncoderSpec, x: &SequenceTensor, y: &[SurvivalOutcome]) -> Result<String> {
        let mut bytes = x.to_bytes()?;
        bytes.extend(serde_json::to_vec(&(spec, self.cfg.train_config(), y))?);
        Ok(git_hash(&bytes))
    }

    /// Reuses a checkpoint built from identical inputs.
    fn cached_model(&self, spec: &EncoderSpec, key: &str) -> Option<EncoderModel> {
        let path = self.out.path(&format!("model_{}.sqcx", spec.kind.as_str()));
        if artifact::sidecar_inputs_hash(&path).as_deref() != Some(key) {
            return None;
        }
        let model = EncoderModel::from_bytes(&std::fs::read(&path).ok()?).ok()?;
        log::info!("reusing {}", path.display());
        Some(model)
    }

    fn train_all(&mut self, reuse: bool) -> Result<()> {
        self.require_models()?;
        self.ingest()?;
        let ing = self.ingested.as_ref().expect("ingested");
        let train_x = ing.sequences.subset(&ing.train_rows)?;
        let train_y = ing.train_outcomes();
        let tcfg = self.cfg.train_config();
        let mut trained = Vec::new();
        for &kind in &self.cfg.models {
            let spec = self.encoder_spec(kind, ing);
            let key = self.training_key(&spec, &train_x, &train_y)?;
            if reuse {
                if let Some(model) = self.cached_model(&spec, &key) {
                    trained.push(TrainedEncoder { model, report: None });
                    continue;
                }
            }
            log::info!("training {} encoder", kind.as_str());
            let (model, report) = train_encoder(EncoderModel::new(spec)?, &train_x, &train_y, &tcfg)?;
            self.out.binary(
                &format!("model_{}.sqcx", kind.as_str()),
                &model.to_bytes(Some(&tcfg))?,
                Some(&key),
            )?;
            self.out.json(&format!("train_{}.json", kind.as_str()), &report)?;
            trained.push(TrainedEncoder {
                model,
                report: Some(report),
            });
        }
        self.trained = Some(trained);
        Ok(())
    }

    /// Trains every selected encoder on the training split.
    pub fn train(&mut self) -> Result<&[TrainedEncoder]> {
        if self.trained.is_none()
            || self
                .trained
                .as_ref()
                .is_some_and(|t| t.iter().any(|m| m.report.is_none()))
        {
            self.train_all(false).map_err(|e| e.in_stage("train"))?;
        }
        Ok(self.trained.as_deref().expect("trained"))
    }

    fn ensure_trained(&mut self) -> Result<()> {
        if self.trained.is_none() {
            self.train_all(true).map_err(|e| e.in_stage("train"))?;
        }
        Ok(())
    }

    fn compute_deep(&mut self) -> Result<()> {
        self.ensure_trained()?;
        let ing = self.ingested.as_ref().expect("ingested");
        let train_y = ing.train_outcomes();
        let test_y = ing.test_outcomes();
        let mut out = Vec::new();
        for t in self.trained.as_ref().expect("trained") {
            let kind = t.model.kind();
            let stage = |e: Error| e.in_stage("fit-cox");
            let features = t.model.extract_features(&ing.sequences).map_err(stage)?;
            let f = features.shape()[1];
            let pick = |rows: &[usize]| -> Result<Tensor> {
                let mut v = Vec::with_capacity(rows.len() * f);
                for &i in rows {
                    v.extend_from_slice(&features.data()[i * f..(i + 1) * f]);
                }
                Tensor::new(vec![rows.len(), f], v)
            };
            let fit = fit_cox(&pick(&ing.train_rows)?, &train_y, &self.cfg.cox_options()).map_err(stage)?;
            let risk = fit.risk_scores(&features).map_err(stage)?;
            let train_risk: Vec<f64> = ing.train_rows.iter().map(|&i| risk[i]).collect();
            let c_index_train = concordance_index(&train_risk, &train_y).map_err(stage)?;
            let c_index_test = if ing.test_rows.is_empty() {
                None
            } else {
                let test_risk: Vec<f64> = ing.test_rows.iter().map(|&i| risk[i]).collect();
                concordance_index(&test_risk, &test_y).ok()
            };
            let split = risk_groups(&train_risk).map_err(|e| e.in_stage("km"))?;
            let (high, low) = split.partition(&train_y);
            let logrank = match logrank_test(&high, &low) {
                Ok(lr) => Some(lr),
                Err(e) => {
                    log::warn!("{}: log-rank test unavailable: {e}", kind.cox_label());
                    None
                }
            };
            out.push(DeepCox {
                kind,
                features,
                fit,
                risk,
                c_index_train,
                c_index_test,
                km_high: kaplan_meier(&high),
                km_low: kaplan_meier(&low),
                split,
                logrank,
            });
        }
        self.deep = Some(out);
        Ok(())
    }

    fn ensure_deep(&mut self) -> Result<()> {
        if self.deep.is_none() {
            self.compute_deep()?;
        }
        Ok(())
    }

    /// Writes `features_<model>.csv` with the deep features of every patient.
    pub fn features(&mut self) -> Result<()> {
        self.ensure_deep()?;
        let ing = self.ingested.as_ref().expect("ingested");
        for d in self.deep.as_ref().expect("deep") {
            let f = d.features.shape()[1];
            let body = csv_bytes(|w| {
                let mut header = vec!["patient_id".to_string(), "split".to_string()];
                header.extend((1..=f).map(|k| format!("f{k}")));
                w.write_record(&header)?;
                for (i, o) in ing.outcomes.iter().enumerate() {
                    let s = if ing.train_rows.binary_search(&i).is_ok() {
                        "train"
                    } else {
                        "test"
                    };
                    let mut rec = vec![o.patient_id.to_string(), s.to_string()];
                    rec.extend(d.features.data()[i * f..(i + 1) * f].iter().map(|v| v.to_string()));
                    w.write_record(&rec)?;
                }
                Ok(())
            })
            .map_err(|e| e.in_stage("features"))?;
            self.out
                .text(&format!("features_{}.csv", d.label()), &body, &[])
                .map_err(|e| e.in_stage("features"))?;
        }
        Ok(())
    }

    /// Fits Cox models on deep features and writes `fit_<model>.json`.
    pub fn fit_cox(&mut self) -> Result<&[DeepCox]> {
        self.ensure_deep()?;
        for d in self.deep.as_ref().expect("deep") {
            let art = FitArtifact {
                model: d.label(),
                summary: d.fit.summary(),
                c_index_test: d.c_index_test,
                separation: d.fit.separation,
                warnings: &d.fit.warnings,
            };
            self.out
                .json(&format!("fit_{}.json", d.label()), &art)
                .map_err(|e| e.in_stage("fit-cox"))?;
        }
        Ok(self.deep.as_deref().expect("deep"))
    }

    /// Fits every selected classical model on the full table and writes
    /// `fit_<kind>.json`.
    pub fn fit_classical(&mut self) -> Result<&[ClassicalFit]> {
        if self.classical.is_none() {
            self.ingest()?;
            let run = |this: &Self| -> Result<Vec<ClassicalFit>> {
                let ing = this.ingested.as_ref().expect("ingested");
                let mut fits = Vec::new();
                for &kind in &this.cfg.classical {
                    let table = expand(
                        &ing.records,
                        &this.cfg.classical_covariates,
                        kind,
                        &this.cfg.expand_options(),
                    )?;
                    let fit = fit_classical(&table, &this.cfg.cox_options())?;
                    let art = ClassicalArtifact {
                        summary: fit.summary(),
                        warnings: &fit.warnings,
                    };
                    this.out.json(&format!("fit_{}.json", kind.as_str()), &art)?;
                    fits.push(fit);
                }
                Ok(fits)
            };
            self.classical = Some(run(self).map_err(|e| e.in_stage("fit-classical"))?);
        }
        Ok(self.classical.as_deref().expect("classical"))
    }

    /// Writes `metrics.json`: deep-feature Cox rows, then classical rows.
    pub fn evaluate(&mut self) -> Result<Metrics> {
        if self.cfg.models.is_empty() && self.cfg.classical.is_empty() {
            return Err(Error::invalid("nothing to run: no models selected").in_stage("evaluate"));
        }
        let mut rows = Vec::new();
        if !self.cfg.models.is_empty() {
            for d in self.fit_cox()? {
                rows.push(MetricRow {
                    model: d.label().to_string(),
                    c_index: d.c_index_train,
                    c_index_test: d.c_index_test,
                    aic: d.fit.aic,
                    log_partial_likelihood: d.fit.log_partial_likelihood,
                    logrank_p: d.logrank.as_ref().map(|l| l.p),
                    n: d.fit.n,
                    n_events: d.fit.n_events,
                    converged: d.fit.converged,
                });
            }
        }
        for c in self.fit_classical()? {
            rows.push(MetricRow {
                model: c.model_kind.as_str().to_string(),
                c_index: c.fit.c_index,
                c_index_test: None,
                aic: c.fit.aic,
                log_partial_likelihood: c.fit.log_partial_likelihood,
                logrank_p: None,
                n: c.fit.n,
                n_events: c.fit.n_events,
                converged: c.fit.converged,
            });
        }
        let metrics = Metrics { rows };
        self.out
            .json("metrics.json", &metrics)
            .map_err(|e| e.in_stage("evaluate"))?;
        Ok(metrics)
    }

    /// Writes `km_<model>.csv`: high- and low-risk curves of the training
    /// split with the log-rank statistic in the header.
    pub fn km(&mut self) -> Result<()> {
        self.require_models().map_err(|e| e.in_stage("km"))?;
        self.ensure_deep()?;
        for d in self.deep.as_ref().expect("deep") {
            let mut body = Vec::new();
            let write = |body: &mut Vec<u8>| -> Result<()> {
                d.km_high.write_csv(&mut *body, "high", true)?;
                d.km_low.write_csv(&mut *body, "low", false)
            };
            write(&mut body).map_err(|e| e.in_stage("km"))?;
            let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |x| x.to_string());
            let extra = [
                ("logrank_chi2", fmt(d.logrank.as_ref().map(|l| l.chi2))),
                ("logrank_p", fmt(d.logrank.as_ref().map(|l| l.p))),
                ("median_risk", d.split.median.to_string()),
                ("n_high", d.split.n_high().to_string()),
                ("n_low", (d.split.high.len() - d.split.n_high()).to_string()),
            ];
            self.out
                .text(&format!("km_{}.csv", d.label()), &body, &extra)
                .map_err(|e| e.in_stage("km"))?;
        }
        Ok(())
    }

    /// LIME for every patient and gradient saliency on the `explain_model`
    /// encoder. Writes `lime_explanations.json`, `lime_freq.json`,
    /// `saliency.csv` and `saliency.json`.
    pub fn explain(&mut self) -> Result<ExplainOutput> {
        self.ensure_trained()?;
        let run = |this: &Self| -> Result<ExplainOutput> {
            let ing = this.ingested.as_ref().expect("ingested");
            let model = &this
                .trained
                .as_ref()
                .expect("trained")
                .iter()
                .find(|t| t.model.kind() == this.cfg.explain_model)
                .ok_or_else(|| {
                    Error::invalid(format!(
                        "explain_model `{}` is not among models",
                        this.cfg.explain_model.as_str()
                    ))
                })?
                .model;
            let background = ing.sequences.subset(&ing.train_rows)?;
            let rows: Vec<usize> = (0..ing.sequences.n()).collect();
            let explanations = lime_batch(model, &ing.sequences, &rows, &background, &this.cfg.lime_config())?;
            let frequency = feature_frequency(&explanations, this.cfg.lime_top_k)?;
            this.out.json("lime_explanations.json", &explanations)?;
            #[derive(Serialize)]
            struct Freq<'a> {
                model: &'a str,
                top_k: usize,
                n_explanations: usize,
                counts: &'a indexmap::IndexMap<String, usize>,
            }
            this.out.json(
                "lime_freq.json",
                &Freq {
                    model: this.cfg.explain_model.as_str(),
                    top_k: this.cfg.lime_top_k,
                    n_explanations: explanations.len(),
                    counts: &frequency,
                },
            )?;
            let saliency = gradient_saliency(model, &ing.sequences)?;
            let mut body = Vec::new();
            saliency.write_csv(&mut body)?;
            this.out.text(
                "saliency.csv",
                &body,
                &[("model", this.cfg.explain_model.as_str().to_string())],
            )?;
            this.out.json("saliency.json", &saliency)?;
            Ok(ExplainOutput {
                explanations,
                frequency,
                saliency,
            })
        };
        run(self).map_err(|e| e.in_stage("explain"))
    }

    /// Embeds the deep features of every patient; writes `tsne_<model>.csv`
    /// labelled by median risk split over all patients.
    pub fn tsne(&mut self) -> Result<Vec<Embedding>> {
        self.require_models().map_err(|e| e.in_stage("tsne"))?;
        self.ensure_deep()?;
        let ing = self.ingested.as_ref().expect("ingested");
        let mut out = Vec::new();
        for d in self.deep.as_ref().expect("deep") {
            let run = || -> Result<Embedding> {
                let emb = tsne(&d.features, &self.cfg.embed_config())?;
                let groups: Vec<String> = risk_groups(&d.risk)?
                    .high
                    .iter()
                    .map(|&h| if h { "high" } else { "low" }.to_string())
                    .collect();
                let mut body = Vec::new();
                emb.write_csv(&mut body, &ing.sequences.patient_ids, &groups)?;
                let extra = [("kl", emb.kl.to_string()), ("perplexity", emb.perplexity.to_string())];
                self.out.text(&format!("tsne_{}.csv", d.label()), &body, &extra)?;
                Ok(emb)
            };
            out.push(run().map_err(|e| e.in_stage("tsne"))?);
        }
        Ok(out)
    }

    /// Every stage in order. `simulate` only runs for simulated sources.
    pub fn run_all(&mut self) -> Result<()> {
        self.require_models().map_err(|e| e.in_stage("run-all"))?;
        self.ingest()?;
        if self.cfg.source == Source::Simulate {
            self.simulate()?;
        }
        self.train()?;
        self.features()?;
        self.evaluate()?;
        self.km()?;
        self.explain()?;
        self.tsne()?;
        Ok(())
    }
}
