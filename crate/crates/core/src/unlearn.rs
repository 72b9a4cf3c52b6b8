//! Model-contrastive unlearning on the target client.
//!
//! The working model starts from the trained global model and is driven so
//! that its features on the forgotten data resemble those of a downgraded
//! model (one that never saw the data) and differ from the trained model's:
//!
//! ```text
//! L = -log( e^{s_d/tau} / (e^{s_d/tau} + e^{s_t/tau}) ) = softplus((s_t - s_d) / tau)
//! ```
//!
//! with `s_d = cos(z, z_down)` and `s_t = cos(z, z_tr)`. Every `fgmp_interval`
//! iterations the working parameters are passed through
//! [`fgmp_apply`](crate::spectral::fgmp_apply) against the trained model.

use serde::{Deserialize, Serialize};

use crate::data::{BatchSampler, Dataset};
use crate::nn::{cosine_similarity, dot, norm, AdamState, NetworkModel, NORM_FLOOR};
use crate::spectral::fgmp_apply;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnlearnConfig {
    pub temperature: f64,
    pub fgmp_interval: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    /// Low-frequency ratio `r` of the blend mask.
    pub ratio: f64,
    #[serde(skip)]
    pub fgmp_enabled: bool,
    pub batch_size: usize,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        Self {
            temperature: 0.5,
            fgmp_interval: 10,
            iterations: 100,
            learning_rate: 1e-5,
            ratio: 0.5,
            fgmp_enabled: true,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl UnlearnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidArgument("temperature must be positive".into()));
        }
        if self.fgmp_interval == 0 {
            return Err(Error::InvalidArgument("fgmp_interval must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(Error::InvalidArgument("ratio must lie in [0, 1]".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        Ok(())
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_inputs(z: &[f64], z_down: &[f64], z_tr: &[f64], tau: f64) -> Result<()> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature {tau} must be positive")));
    }
    if z.len() != z_down.len() || z.len() != z_tr.len() {
        return Err(Error::InvalidArgument(format!(
            "feature lengths {}, {}, {} differ",
            z.len(),
            z_down.len(),
            z_tr.len()
        )));
    }
    Ok(())
}

/// Contrastive unlearning loss for one sample.
pub fn mcu_loss(z: &[f64], z_down: &[f64], z_tr: &[f64], tau: f64) -> Result<f64> {
    check_inputs(z, z_down, z_tr, tau)?;
    let s_d = cosine_similarity(z, z_down)?.value;
    let s_t = cosine_similarity(z, z_tr)?.value;
    Ok(softplus((s_t - s_d) / tau))
}

/// `d cos(z, b) / dz`; zero when either vector is degenerate.
fn cosine_grad(z: &[f64], b: &[f64], out: &mut [f64], scale: f64) {
    let nz = norm(z);
    let nb = norm(b);
    if nz < NORM_FLOOR || nb < NORM_FLOOR {
        return;
    }
    let cos = dot(z, b) / (nz * nb);
    let inv = 1.0 / (nz * nb);
    let zz = cos / (nz * nz);
    for i in 0..z.len() {
        out[i] += scale * (b[i] * inv - zz * z[i]);
    }
}

/// Gradient of [`mcu_loss`] with respect to `z`; the anchors are constants.
pub fn mcu_loss_grad(z: &[f64], z_down: &[f64], z_tr: &[f64], tau: f64) -> Result<Vec<f64>> {
    check_inputs(z, z_down, z_tr, tau)?;
    let mut g = vec![0.0; z.len()];
    accumulate_grad(z, z_down, z_tr, tau, 1.0, &mut g)?;
    Ok(g)
}

fn accumulate_grad(
    z: &[f64],
    z_down: &[f64],
    z_tr: &[f64],
    tau: f64,
    weight: f64,
    out: &mut [f64],
) -> Result<f64> {
    let s_d = cosine_similarity(z, z_down)?.value;
    let s_t = cosine_similarity(z, z_tr)?.value;
    let u = (s_t - s_d) / tau;
    let coeff = weight * sigmoid(u) / tau;
    cosine_grad(z, z_tr, out, coeff);
    cosine_grad(z, z_down, out, -coeff);
    Ok(softplus(u))
}

/// Batch-mean loss and its gradient at the working model's features.
#[derive(Debug, Clone)]
pub struct McuBatch {
    pub loss: f64,
    pub grad: Tensor,
    pub mean_sim_down: f64,
    pub mean_sim_tr: f64,
}

pub fn mcu_batch(z: &Tensor, z_down: &Tensor, z_tr: &Tensor, tau: f64) -> Result<McuBatch> {
    if z.shape() != z_down.shape() || z.shape() != z_tr.shape() {
        return Err(Error::InvalidArgument(format!(
            "feature batches {:?}, {:?}, {:?} differ",
            z.shape(),
            z_down.shape(),
            z_tr.shape()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature {tau} must be positive")));
    }
    let n = z.rows();
    let w = z.row_len();
    let inv = 1.0 / n as f64;
    let mut grad = Tensor::zeros(z.shape().to_vec());
    let (mut loss, mut sd, mut st) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (a, d, t) = (z.row(i), z_down.row(i), z_tr.row(i));
        let g = &mut grad.data_mut()[i * w..(i + 1) * w];
        loss += accumulate_grad(a, d, t, tau, inv, g)?;
        sd += cosine_similarity(a, d)?.value;
        st += cosine_similarity(a, t)?.value;
    }
    Ok(McuBatch {
        loss: loss * inv,
        grad,
        mean_sim_down: sd * inv,
        mean_sim_tr: st * inv,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnlearnStep {
    pub iteration: usize,
    pub loss: f64,
    pub mean_sim_down: f64,
    pub mean_sim_tr: f64,
}

impl UnlearnStep {
    /// `sim(z, z_tr) - sim(z, z_down)`; unlearning drives it down.
    pub fn similarity_gap(&self) -> f64 {
        self.mean_sim_tr - self.mean_sim_down
    }
}

#[derive(Debug, Clone)]
pub struct UnlearnOutcome {
    pub model: NetworkModel,
    pub trace: Vec<UnlearnStep>,
    pub fgmp_applications: usize,
}

/// Runs local unlearning; see [`local_unlearn_observed`].
pub fn local_unlearn(
    trained: &NetworkModel,
    downgraded: &NetworkModel,
    forget: &Dataset,
    cfg: &UnlearnConfig,
) -> Result<UnlearnOutcome> {
    local_unlearn_observed(trained, downgraded, forget, cfg, |_, _| {})
}

/// Local unlearning loop. `observe(i, model)` runs after iteration `i`
/// (1-based) once any scheduled blend has been applied; the trailing
/// end-of-loop blend is not observed separately.
pub fn local_unlearn_observed(
    trained: &NetworkModel,
    downgraded: &NetworkModel,
    forget: &Dataset,
    cfg: &UnlearnConfig,
    mut observe: impl FnMut(usize, &NetworkModel),
) -> Result<UnlearnOutcome> {
    cfg.validate()?;
    if forget.is_empty() {
        return Err(Error::EmptyDataset("forget set".into()));
    }
    if trained.architecture() != downgraded.architecture() {
        return Err(Error::Incongruent(
            "trained and downgraded models differ in architecture".into(),
        ));
    }
    trained.params().ensure_congruent(downgraded.params())?;

    let mut working = trained.clone();
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut fgmp_applications = 0;
    if cfg.iterations == 0 {
        return Ok(UnlearnOutcome {
            model: working,
            trace,
            fgmp_applications,
        });
    }

    let mut adam = AdamState::new(working.params(), cfg.learning_rate);
    let mut sampler = BatchSampler::new(forget.len(), cfg.batch_size, cfg.seed)?;
    for it in 1..=cfg.iterations {
        let (x, _) = forget.batch(&sampler.next_batch());
        let ((z_tr, z_down), z) = rayon::join(
            || rayon::join(|| trained.forward(&x), || downgraded.forward(&x)),
            || working.forward_cached(&x),
        );
        let (z_tr, z_down, z) = (z_tr?.features, z_down?.features, z?.features);
        let step = mcu_batch(&z, &z_down, &z_tr, cfg.temperature)?;
        let grads = working.backward(None, Some(&step.grad))?;
        adam.step(working.params_mut(), &grads)?;
        trace.push(UnlearnStep {
            iteration: it,
            loss: step.loss,
            mean_sim_down: step.mean_sim_down,
            mean_sim_tr: step.mean_sim_tr,
        });
        if cfg.fgmp_enabled && it.is_multiple_of(cfg.fgmp_interval) {
            let blended = fgmp_apply(trained.params(), working.params(), cfg.ratio)?;
            working.set_params(blended)?;
            fgmp_applications += 1;
        }
        observe(it, &working);
    }
    if cfg.fgmp_enabled && !cfg.iterations.is_multiple_of(cfg.fgmp_interval) {
        let blended = fgmp_apply(trained.params(), working.params(), cfg.ratio)?;
        working.set_params(blended)?;
        fgmp_applications += 1;
    }
    Ok(UnlearnOutcome {
        model: working,
        trace,
        fgmp_applications,
    })
}
