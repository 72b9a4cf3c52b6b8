//! End-to-end experiment wiring: data, clients, the training phases and
//! their evaluation.

use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::config::RunConfig;
use crate::data::{generate_synthetic, load_csv, split_712, Dataset};
use crate::eval::MetricsReport;
use crate::federation::{dirichlet_partition, ClientState, Federation, TrainOutcome};
use crate::nn::{Architecture, NetworkModel};
use crate::seed::{derive_seed, Stream};
use crate::tensor::ParameterSet;
use crate::unlearn::{local_unlearn_observed, UnlearnStep};
use crate::{Error, Result};

/// A configured federation with its held-out splits.
#[derive(Debug)]
pub struct Experiment {
    cfg: RunConfig,
    digest: String,
    arch: Architecture,
    federation: Federation,
    validation: Dataset,
    test: Dataset,
}

/// A training phase together with the number of target-client reads it made.
#[derive(Debug, Clone)]
pub struct AuditedRun {
    pub outcome: TrainOutcome,
    pub target_reads: u64,
}

#[derive(Debug, Clone)]
pub struct UnlearnRun {
    /// Model right after local unlearning.
    pub unlearned: ParameterSet,
    pub trace: Vec<UnlearnStep>,
    pub fgmp_applications: usize,
    pub unlearn_elapsed: Duration,
    pub post_train: Option<AuditedRun>,
}

impl UnlearnRun {
    pub fn final_params(&self) -> &ParameterSet {
        self.post_train
            .as_ref()
            .map_or(&self.unlearned, |p| &p.outcome.model.params)
    }

    pub fn elapsed(&self) -> Duration {
        self.unlearn_elapsed + self.post_train.as_ref().map_or(Duration::ZERO, |p| p.outcome.elapsed)
    }
}

impl Experiment {
    pub fn build(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let source = match &cfg.data.csv {
            Some(path) => load_csv(path)?,
            None => generate_synthetic(&cfg.synthetic_spec())?,
        };
        let (train, validation, test) = split_712(&source, derive_seed(cfg.seed, Stream::Split, 0))?;
        let arch = cfg.model.architecture(source.dim(), source.classes())?;

        let fed_cfg = cfg.federation_config();
        let shards = dirichlet_partition(
            &train,
            fed_cfg.clients,
            fed_cfg.dirichlet_alpha,
            derive_seed(cfg.seed, Stream::Partition, 0),
        )?;
        let spec = cfg.data.synthetic.clone();
        let clients = shards
            .iter()
            .enumerate()
            .map(|(k, idx)| {
                let mut data = train.subset(idx)?;
                if cfg.data.csv.is_none() {
                    if let Some(bias) = spec.bias_for(k) {
                        data = data.with_label_bias(bias)?;
                    }
                }
                Ok(ClientState {
                    id: k,
                    data: Arc::new(data),
                    is_target: k == cfg.target_client,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let federation = Federation::new(arch.clone(), clients, fed_cfg)?;
        Ok(Self {
            digest: cfg.digest(),
            cfg,
            arch,
            federation,
            validation,
            test,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn federation(&self) -> &Federation {
        &self.federation
    }

    pub fn test_set(&self) -> &Dataset {
        &self.test
    }

    pub fn validation_set(&self) -> &Dataset {
        &self.validation
    }

    pub fn target_data(&self) -> &Dataset {
        &self.federation.clients()[self.cfg.target_client].data
    }

    pub fn retained_data(&self) -> Vec<&Dataset> {
        self.federation
            .clients()
            .iter()
            .filter(|c| !c.is_target)
            .map(|c| c.data.as_ref())
            .collect()
    }

    /// Seeded initialization shared by the initial FL run and the retrain
    /// baseline; also serves as the downgraded model.
    pub fn initial_params(&self) -> ParameterSet {
        self.arch.init_params(derive_seed(self.cfg.seed, Stream::Init, 0))
    }

    fn audited(&self, f: impl FnOnce() -> Result<TrainOutcome>) -> Result<AuditedRun> {
        let before = self.target_data().access_count();
        let outcome = f()?;
        Ok(AuditedRun {
            outcome,
            target_reads: self.target_data().access_count() - before,
        })
    }

    pub fn train_origin(&self) -> Result<TrainOutcome> {
        self.federation.fl_train(&self.initial_params())
    }

    pub fn retrain(&self) -> Result<AuditedRun> {
        let init = self.initial_params();
        self.audited(|| self.federation.retrain_baseline(&init))
    }

    pub fn finetune(&self, trained: &ParameterSet) -> Result<AuditedRun> {
        self.audited(|| self.federation.finetune_baseline(trained))
    }

    pub fn unlearn(&self, trained: &ParameterSet) -> Result<UnlearnRun> {
        self.unlearn_observed(trained, |_, _| {})
    }

    /// Local unlearning on the target client followed by post-training
    /// when enabled. `observe` sees the working model after each local
    /// iteration and is excluded from the timing.
    pub fn unlearn_observed(
        &self,
        trained: &ParameterSet,
        mut observe: impl FnMut(usize, &NetworkModel),
    ) -> Result<UnlearnRun> {
        let m_tr = NetworkModel::new(self.arch.clone(), trained.clone())?;
        let m_down = NetworkModel::new(self.arch.clone(), self.initial_params())?;
        let ucfg = self.cfg.unlearn_config();
        let mut observing = Duration::ZERO;
        let start = Instant::now();
        let out = local_unlearn_observed(&m_tr, &m_down, self.target_data(), &ucfg, |i, m| {
            let t = Instant::now();
            observe(i, m);
            observing += t.elapsed();
        })?;
        let unlearn_elapsed = start.elapsed().saturating_sub(observing);
        let unlearned = out.model.into_params();
        let post_train = if self.cfg.post_train_enabled {
            Some(self.audited(|| self.federation.post_train(&unlearned))?)
        } else {
            None
        };
        Ok(UnlearnRun {
            unlearned,
            trace: out.trace,
            fgmp_applications: out.fgmp_applications,
            unlearn_elapsed,
            post_train,
        })
    }

    pub fn evaluate(&self, method: &str, params: &ParameterSet, runtime: Duration) -> Result<MetricsReport> {
        let model = NetworkModel::new(self.arch.clone(), params.clone())?;
        let retained = self.retained_data();
        if retained.is_empty() {
            return Err(Error::InvalidArgument("no retained clients".into()));
        }
        MetricsReport::evaluate(
            method,
            &model,
            &self.test,
            &retained,
            self.target_data(),
            runtime.as_secs_f64(),
            self.cfg.seed,
            &self.digest,
        )
    }
}
