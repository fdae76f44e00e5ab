use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{augment, AdamState, EpochRecord, Phase, Strategy, TrainConfig, TrainError, TrainLog};
use crate::analysis::dice_score;
use crate::data::{Sample, SampleSet};
use crate::losses::{
    attention_recon_loss, dice_loss, joint_loss, plain_recon_loss, split_reconstruction, AttentionMasks, LossReport,
    ReconTerms,
};
use crate::model::{BoundParams, MasslModel, NetworkConfig, ParamGroup};
use crate::scalar::Scalar;
use crate::tensor::{Graph, TensorId};

const ORDER_STREAM: u64 = 1;
const AUGMENT_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconKind {
    /// Reconstruct the raw image (MSSL and pretraining).
    Plain,
    /// Reconstruct the image split by the current soft segmentation (MASSL).
    Attention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Segmentation,
    Reconstruction,
    Joint,
}

/// Hook around every optimizer step, for instrumentation.
pub trait StepObserver<T> {
    fn before_step(&mut self, _kind: StepKind, _model: &MasslModel<T>) {}
    fn after_step(&mut self, _kind: StepKind, _model: &MasslModel<T>, _report: &LossReport) {}
}

pub struct NoObserver;

impl<T> StepObserver<T> for NoObserver {}

/// A minibatch in model layout: images `[N, 1, H, W]`, masks alike.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub size: usize,
    pub images: Vec<T>,
    /// Present only when every sample carries a mask.
    pub masks: Option<Vec<T>>,
}

impl<T: Scalar> Batch<T> {
    pub fn from_samples(samples: &[Sample], net: &NetworkConfig) -> Result<Self, TrainError> {
        if net.in_channels != 1 {
            return Err(TrainError::Config(format!(
                "samples are single-channel but the network expects {} input channels",
                net.in_channels
            )));
        }
        let n = net.height * net.width;
        let mut images = Vec::with_capacity(samples.len() * n);
        let mut masks = Some(Vec::with_capacity(samples.len() * n));
        for s in samples {
            if (s.height, s.width) != (net.height, net.width) || s.image.len() != n {
                return Err(TrainError::Config(format!(
                    "sample `{}` is {}x{}, network expects {}x{}",
                    s.id, s.height, s.width, net.height, net.width
                )));
            }
            images.extend(s.image.iter().map(|&v| T::of(v as f64)));
            match (&mut masks, &s.mask) {
                (Some(out), Some(m)) => out.extend(m.iter().map(|&v| T::of(v as f64))),
                _ => masks = None,
            }
        }
        Ok(Self {
            size: samples.len(),
            images,
            masks,
        })
    }
}

fn input<T: Scalar>(g: &mut Graph<T>, net: &NetworkConfig, batch: &Batch<T>) -> Result<TensorId, TrainError> {
    Ok(g.constant(&net.input_shape(batch.size), batch.images.clone())?)
}

fn segmentation_loss<T: Scalar>(
    model: &MasslModel<T>,
    g: &mut Graph<T>,
    p: &BoundParams,
    batch: &Batch<T>,
) -> Result<TensorId, TrainError> {
    let masks = batch
        .masks
        .clone()
        .ok_or_else(|| TrainError::Config("segmentation step on a batch without masks".into()))?;
    let x = input(g, model.config(), batch)?;
    let features = model.encode(g, p, x)?;
    let seg = model.segment(g, p, &features)?;
    let target = g.constant(g.shape(seg).to_vec().as_slice(), masks)?;
    Ok(dice_loss(g, seg, target)?)
}

fn reconstruction_loss<T: Scalar>(
    model: &MasslModel<T>,
    g: &mut Graph<T>,
    p: &BoundParams,
    batch: &Batch<T>,
    kind: ReconKind,
) -> Result<(TensorId, ReconTerms), TrainError> {
    let expected = match kind {
        ReconKind::Plain => 1,
        ReconKind::Attention => 2,
    };
    if model.config().recon_channels != expected {
        return Err(TrainError::Config(format!(
            "{kind:?} reconstruction needs {expected} output channels, model has {}",
            model.config().recon_channels
        )));
    }
    let x = input(g, model.config(), batch)?;
    let features = model.encode(g, p, x)?;
    let recon = model.reconstruct(g, p, &features)?;
    match kind {
        ReconKind::Plain => {
            let loss = plain_recon_loss(g, x, recon)?;
            let l2 = g.item(loss).as_f64();
            Ok((
                loss,
                ReconTerms {
                    l2,
                    ..ReconTerms::default()
                },
            ))
        }
        ReconKind::Attention => {
            let seg = model.segment(g, p, &features)?;
            let masks = AttentionMasks::from_prediction(g, seg);
            let (bg, fg) = split_reconstruction(g, recon)?;
            Ok(attention_recon_loss(g, x, bg, fg, masks)?)
        }
    }
}

/// Backpropagates `loss` and steps `opt` unless the loss is non-finite, in
/// which case the model is left untouched.
fn apply<T: Scalar>(
    model: &mut MasslModel<T>,
    opt: &mut AdamState<T>,
    mut g: Graph<T>,
    p: &BoundParams,
    loss: TensorId,
) -> Result<f64, TrainError> {
    let value = g.item(loss).as_f64();
    if value.is_finite() {
        g.backward(loss)?;
        let grads = p.gradients(&g);
        opt.step(model.params_mut(), &grads)?;
    }
    Ok(value)
}

/// One Dice-loss step on a labeled batch.
pub fn segmentation_step<T: Scalar>(
    model: &mut MasslModel<T>,
    opt: &mut AdamState<T>,
    batch: &Batch<T>,
) -> Result<LossReport, TrainError> {
    let mut g = Graph::new();
    let p = model.bind(&mut g, |grp| opt.covers(grp));
    let loss = segmentation_loss(model, &mut g, &p, batch)?;
    let l1 = apply(model, opt, g, &p, loss)?;
    Ok(LossReport {
        l1: Some(l1),
        recon: None,
        combined: l1,
    })
}

/// One reconstruction step on an unlabeled batch.
pub fn reconstruction_step<T: Scalar>(
    model: &mut MasslModel<T>,
    opt: &mut AdamState<T>,
    batch: &Batch<T>,
    kind: ReconKind,
) -> Result<LossReport, TrainError> {
    let mut g = Graph::new();
    let p = model.bind(&mut g, |grp| opt.covers(grp));
    let (loss, terms) = reconstruction_loss(model, &mut g, &p, batch, kind)?;
    let l2 = apply(model, opt, g, &p, loss)?;
    Ok(LossReport {
        l1: None,
        recon: Some(terms),
        combined: l2,
    })
}

/// One step on `gamma * L1(labeled) + (1 - gamma) * L2(unlabeled)`.
pub fn joint_step<T: Scalar>(
    model: &mut MasslModel<T>,
    opt: &mut AdamState<T>,
    labeled: &Batch<T>,
    unlabeled: &Batch<T>,
    gamma: f64,
    kind: ReconKind,
) -> Result<LossReport, TrainError> {
    let mut g = Graph::new();
    let p = model.bind(&mut g, |grp| opt.covers(grp));
    let l1 = segmentation_loss(model, &mut g, &p, labeled)?;
    let (l2, terms) = reconstruction_loss(model, &mut g, &p, unlabeled, kind)?;
    let total = joint_loss(&mut g, l1, l2, gamma)?;
    let l1 = g.item(l1).as_f64();
    let combined = apply(model, opt, g, &p, total)?;
    Ok(LossReport {
        l1: Some(l1),
        recon: Some(terms),
        combined,
    })
}

/// Mean per-image Dice of thresholded predictions over `set`.
pub fn evaluate_dice<T: Scalar, S: SampleSet + ?Sized>(
    model: &MasslModel<T>,
    set: &S,
    batch_size: usize,
) -> Result<f64, TrainError> {
    if set.is_empty() {
        return Err(TrainError::Config("cannot evaluate on an empty set".into()));
    }
    let net = model.config();
    let n = net.height * net.width;
    let mut total = 0.0;
    let indices: Vec<usize> = (0..set.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let samples: Vec<Sample> = chunk.iter().map(|&i| set.sample(i).clone()).collect();
        let batch = Batch::<T>::from_samples(&samples, net)?;
        let pred = model.predict(&batch.images, batch.size)?;
        for (k, s) in samples.iter().enumerate() {
            let mask = s
                .mask
                .as_ref()
                .ok_or_else(|| TrainError::Config(format!("evaluation sample `{}` has no mask", s.id)))?;
            total += dice_score(&pred[k * n..(k + 1) * n], mask, 0.5).map_err(|e| TrainError::Config(e.to_string()))?;
        }
    }
    Ok(total / set.len() as f64)
}

/// Labeled, unlabeled and optional validation samples for one run.
#[derive(Clone, Copy)]
pub struct TrainData<'a> {
    pub labeled: &'a dyn SampleSet,
    pub unlabeled: &'a dyn SampleSet,
    pub validation: Option<&'a dyn SampleSet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<T> {
    pub model: MasslModel<T>,
    pub log: TrainLog,
}

#[derive(Default)]
struct EpochMeans {
    l1: (f64, usize),
    l2: (f64, usize),
}

impl EpochMeans {
    fn add(&mut self, r: &LossReport) {
        if let Some(v) = r.l1 {
            self.l1 = (self.l1.0 + v, self.l1.1 + 1);
        }
        if let Some(v) = r.l2() {
            self.l2 = (self.l2.0 + v, self.l2.1 + 1);
        }
    }

    fn finish(&self) -> (Option<f64>, Option<f64>) {
        let m = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
        (m(self.l1), m(self.l2))
    }
}

/// Shared state of one training run: sampling and augmentation streams,
/// the growing log and the observer.
struct Runner<'a, T> {
    cfg: &'a TrainConfig,
    order: ChaCha8Rng,
    aug: ChaCha8Rng,
    log: TrainLog,
    validation: Option<&'a dyn SampleSet>,
    observer: &'a mut dyn StepObserver<T>,
}

impl<'a, T: Scalar> Runner<'a, T> {
    fn new(cfg: &'a TrainConfig, validation: Option<&'a dyn SampleSet>, observer: &'a mut dyn StepObserver<T>) -> Self {
        let stream = |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(s);
            rng
        };
        Self {
            cfg,
            order: stream(ORDER_STREAM),
            aug: stream(AUGMENT_STREAM),
            log: TrainLog::default(),
            validation,
            observer,
        }
    }

    /// `count` distinct indices of `set` in random order.
    fn draw(&mut self, set: &dyn SampleSet, count: usize) -> Vec<usize> {
        sample_indices(&mut self.order, set.len(), count).into_vec()
    }

    fn batch(&mut self, set: &dyn SampleSet, indices: &[usize], net: &NetworkConfig) -> Result<Batch<T>, TrainError> {
        let samples: Vec<Sample> = indices
            .iter()
            .map(|&i| augment(set.sample(i), &self.cfg.augment, &mut self.aug))
            .collect();
        Batch::from_samples(&samples, net)
    }

    fn step(
        &mut self,
        kind: StepKind,
        model: &mut MasslModel<T>,
        phase: Phase,
        epoch: usize,
        means: &mut EpochMeans,
        run: impl FnOnce(&mut MasslModel<T>) -> Result<LossReport, TrainError>,
    ) -> Result<(), TrainError> {
        self.observer.before_step(kind, model);
        let report = run(model)?;
        if !report.combined.is_finite() || report.l1.is_some_and(|v| !v.is_finite()) {
            return Err(self.diverged(phase, epoch));
        }
        self.observer.after_step(kind, model, &report);
        means.add(&report);
        Ok(())
    }

    fn diverged(&mut self, phase: Phase, epoch: usize) -> TrainError {
        log::warn!("{} diverged in {phase} epoch {epoch}", self.cfg.strategy);
        TrainError::Diverged {
            strategy: self.cfg.strategy,
            phase,
            epoch,
            log: Box::new(std::mem::take(&mut self.log)),
        }
    }

    fn end_epoch(
        &mut self,
        model: &MasslModel<T>,
        phase: Phase,
        epoch: usize,
        means: EpochMeans,
    ) -> Result<(), TrainError> {
        let (l1, l2) = means.finish();
        let val_dice = match (phase, self.validation) {
            (Phase::Main, Some(v)) if !v.is_empty() => Some(evaluate_dice(model, v, self.cfg.batch_size)?),
            _ => None,
        };
        log::debug!(
            "{} {phase} epoch {epoch}: l1={l1:?} l2={l2:?} val_dice={val_dice:?}",
            self.cfg.strategy
        );
        self.log.records.push(EpochRecord {
            epoch,
            phase,
            strategy: self.cfg.strategy,
            l1,
            l2,
            val_dice,
        });
        Ok(())
    }

    /// Full passes over `labeled` with Dice-loss steps on `groups`.
    fn supervised(
        &mut self,
        model: &mut MasslModel<T>,
        labeled: &dyn SampleSet,
        groups: &[ParamGroup],
    ) -> Result<(), TrainError> {
        let net = model.config().clone();
        let mut opt = AdamState::new(model.params(), groups, self.cfg.lr_seg, self.cfg.adam);
        for epoch in 1..=self.cfg.epochs {
            let mut means = EpochMeans::default();
            for chunk in self.draw(labeled, labeled.len()).chunks(self.cfg.batch_size) {
                let batch = self.batch(labeled, chunk, &net)?;
                self.step(StepKind::Segmentation, model, Phase::Main, epoch, &mut means, |m| {
                    segmentation_step(m, &mut opt, &batch)
                })?;
            }
            self.end_epoch(model, Phase::Main, epoch, means)?;
        }
        Ok(())
    }

    /// Plain reconstruction pretraining of the encoder and reconstruction decoder.
    fn pretrain(&mut self, model: &mut MasslModel<T>, unlabeled: &dyn SampleSet) -> Result<(), TrainError> {
        let net = model.config().clone();
        let groups = [ParamGroup::Encoder, ParamGroup::ReconDecoder];
        let mut opt = AdamState::new(model.params(), &groups, self.cfg.lr_recon, self.cfg.adam);
        for epoch in 1..=self.cfg.pretrain_epochs {
            let mut means = EpochMeans::default();
            for chunk in self.draw(unlabeled, unlabeled.len()).chunks(self.cfg.batch_size) {
                let batch = self.batch(unlabeled, chunk, &net)?;
                self.step(
                    StepKind::Reconstruction,
                    model,
                    Phase::Pretrain,
                    epoch,
                    &mut means,
                    |m| reconstruction_step(m, &mut opt, &batch, ReconKind::Plain),
                )?;
            }
            self.end_epoch(model, Phase::Pretrain, epoch, means)?;
        }
        Ok(())
    }

    fn joint(
        &mut self,
        model: &mut MasslModel<T>,
        labeled: &dyn SampleSet,
        unlabeled: &dyn SampleSet,
    ) -> Result<(), TrainError> {
        let gamma = self
            .cfg
            .gamma
            .ok_or_else(|| TrainError::Config("joint training requires gamma".into()))?;
        let kind = self.cfg.strategy.recon_kind();
        let net = model.config().clone();
        let half = self.cfg.batch_size / 2;
        let mut opt = AdamState::new(model.params(), &ParamGroup::ALL, self.cfg.lr_seg, self.cfg.adam);
        let pairs = labeled.len().min(unlabeled.len());
        for epoch in 1..=self.cfg.epochs {
            let mut means = EpochMeans::default();
            let li = self.draw(labeled, pairs);
            let ui = self.draw(unlabeled, pairs);
            for (lc, uc) in li.chunks(half).zip(ui.chunks(half)) {
                let lb = self.batch(labeled, lc, &net)?;
                let ub = self.batch(unlabeled, uc, &net)?;
                self.step(StepKind::Joint, model, Phase::Main, epoch, &mut means, |m| {
                    joint_step(m, &mut opt, &lb, &ub, gamma, kind)
                })?;
            }
            self.end_epoch(model, Phase::Main, epoch, means)?;
        }
        Ok(())
    }

    fn alternating(
        &mut self,
        model: &mut MasslModel<T>,
        labeled: &dyn SampleSet,
        unlabeled: &dyn SampleSet,
    ) -> Result<(), TrainError> {
        let kind = self.cfg.strategy.recon_kind();
        let net = model.config().clone();
        let bs = self.cfg.batch_size;
        let params = model.params();
        let mut seg_opt = AdamState::new(
            params,
            &[ParamGroup::Encoder, ParamGroup::SegDecoder],
            self.cfg.lr_seg,
            self.cfg.adam,
        );
        let mut rec_opt = AdamState::new(
            params,
            &[ParamGroup::Encoder, ParamGroup::ReconDecoder],
            self.cfg.lr_recon,
            self.cfg.adam,
        );
        let count = labeled.len().min(unlabeled.len());
        for epoch in 1..=self.cfg.epochs {
            let mut means = EpochMeans::default();
            let li = self.draw(labeled, count);
            let ui = self.draw(unlabeled, count);
            for (lc, uc) in li.chunks(bs).zip(ui.chunks(bs)) {
                let lb = self.batch(labeled, lc, &net)?;
                self.step(StepKind::Segmentation, model, Phase::Main, epoch, &mut means, |m| {
                    segmentation_step(m, &mut seg_opt, &lb)
                })?;
                let ub = self.batch(unlabeled, uc, &net)?;
                self.step(StepKind::Reconstruction, model, Phase::Main, epoch, &mut means, |m| {
                    reconstruction_step(m, &mut rec_opt, &ub, kind)
                })?;
            }
            self.end_epoch(model, Phase::Main, epoch, means)?;
        }
        Ok(())
    }
}

fn require_sets(strategy: Strategy, data: &TrainData<'_>) -> Result<(), TrainError> {
    if data.labeled.is_empty() {
        return Err(TrainError::Config(format!("{strategy} needs labeled samples")));
    }
    if strategy.uses_unlabeled() && data.unlabeled.is_empty() {
        return Err(TrainError::Config(format!("{strategy} needs unlabeled samples")));
    }
    Ok(())
}

/// Joint training (single optimizer over all groups) of an existing model.
///
/// Each epoch pairs `min(|labeled|, |unlabeled|)` samples from each set into
/// batches that are half labeled, half unlabeled.
pub fn train_joint<T: Scalar>(
    model: &mut MasslModel<T>,
    data: TrainData<'_>,
    cfg: &TrainConfig,
    observer: &mut dyn StepObserver<T>,
) -> Result<TrainLog, TrainError> {
    cfg.validate()?;
    if !cfg.strategy.is_joint() {
        return Err(TrainError::Config(format!("{} is not a joint strategy", cfg.strategy)));
    }
    require_sets(cfg.strategy, &data)?;
    let mut runner = Runner::new(cfg, data.validation, observer);
    runner.joint(model, data.labeled, data.unlabeled)?;
    Ok(runner.log)
}

/// Alternating training: labeled batches step the segmentation optimizer,
/// unlabeled batches the reconstruction optimizer.
pub fn train_alternating<T: Scalar>(
    model: &mut MasslModel<T>,
    data: TrainData<'_>,
    cfg: &TrainConfig,
    observer: &mut dyn StepObserver<T>,
) -> Result<TrainLog, TrainError> {
    cfg.validate()?;
    if !cfg.strategy.is_alternating() {
        return Err(TrainError::Config(format!(
            "{} is not an alternating strategy",
            cfg.strategy
        )));
    }
    require_sets(cfg.strategy, &data)?;
    let mut runner = Runner::new(cfg, data.validation, observer);
    runner.alternating(model, data.labeled, data.unlabeled)?;
    Ok(runner.log)
}

/// Initializes a model from `net` (with the reconstruction head sized for the
/// strategy) and `cfg.seed`, then trains it with the configured strategy.
pub fn run_strategy<T: Scalar>(
    net: &NetworkConfig,
    cfg: &TrainConfig,
    data: TrainData<'_>,
    observer: &mut dyn StepObserver<T>,
) -> Result<TrainOutcome<T>, TrainError> {
    cfg.validate()?;
    require_sets(cfg.strategy, &data)?;
    let mut model = MasslModel::new(cfg.strategy.network(net), cfg.seed)?;
    let mut runner = Runner::new(cfg, data.validation, observer);
    match cfg.strategy {
        Strategy::Cnn => runner.supervised(&mut model, data.labeled, &[ParamGroup::Encoder, ParamGroup::SegDecoder])?,
        Strategy::PretrainDec => {
            runner.pretrain(&mut model, data.unlabeled)?;
            runner.supervised(&mut model, data.labeled, &[ParamGroup::SegDecoder])?;
        }
        Strategy::PretrainCnn => {
            runner.pretrain(&mut model, data.unlabeled)?;
            runner.supervised(&mut model, data.labeled, &[ParamGroup::Encoder, ParamGroup::SegDecoder])?;
        }
        Strategy::MsslJoint | Strategy::MasslJoint => runner.joint(&mut model, data.labeled, data.unlabeled)?,
        Strategy::MsslAlter | Strategy::MasslAlter => runner.alternating(&mut model, data.labeled, data.unlabeled)?,
    }
    Ok(TrainOutcome { model, log: runner.log })
}
