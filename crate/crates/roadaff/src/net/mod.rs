//! The predictor: a small strided conv stack, two 1x1 heads, global max
//! pooling, and SGD training on partially labeled views.
//!
//! The stack downsamples by a fixed factor D, so a score-map cell indexes a
//! D x D pixel block of whatever image size comes in; training runs on
//! crops while inference runs on full frames with the same weights. The max
//! pool makes the supervision weak: only the strongest cell per class
//! receives gradient, which is what lets image-level labels localize
//! attention without any pixel annotations.

pub mod loss;
pub mod tensor;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::annotation::{ClassPrediction, CompleteAffordance, PartialAffordance};
use crate::error::{Error, Result};
use crate::rng::seeded_rng;
use crate::sampler::{plan_epoch, realize_view, EpochItem, SamplerConfig, ViewSample};
use crate::synthgen::Image;
use loss::{sigmoid, total_loss, total_loss_grads, LossBreakdown, ViewTargets};
use tensor::{ConvLayer, Tensor3};

/// Rendered frames carry three channels; the first conv layer is sized for
/// them.
pub const INPUT_CHANNELS: usize = 3;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    /// (out_channels, kernel, stride) per layer; strides multiply to the
    /// downsample factor D.
    pub conv_stack: Vec<(usize, usize, usize)>,
    pub num_classes: usize,
    /// (multi-label, distance, top-1).
    pub loss_weights: (f64, f64, f64),
    pub learning_rate: f64,
    pub batch_size: usize,
    /// SGD steps per round.
    pub iterations: usize,
    pub rounds: usize,
    /// Distance regression range cap in meters.
    pub max_dist: f64,
    /// Presence threshold on the sigmoid score.
    pub positive_threshold: f64,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            conv_stack: vec![(16, 3, 2); 4],
            num_classes: 3,
            loss_weights: (1.0, 0.1, 1.0),
            learning_rate: 0.5e-4,
            batch_size: 1,
            iterations: 5000,
            rounds: 3,
            max_dist: 15.0,
            positive_threshold: 0.9,
            seed: 0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes != 3 {
            return Err(Error::InvalidConfig(
                "the class set is fixed at left/straight/right".into(),
            ));
        }
        if self.conv_stack.is_empty() {
            return Err(Error::InvalidConfig("conv stack is empty".into()));
        }
        for &(c, k, s) in &self.conv_stack {
            if c == 0 || s == 0 || k == 0 || k % 2 == 0 {
                return Err(Error::InvalidConfig(format!(
                    "bad conv layer ({c}, {k}, {s}): channels/stride positive, kernel odd"
                )));
            }
        }
        let (w1, w2, w3) = self.loss_weights;
        if !(w1 > 0.0 && w2 > 0.0 && w3 > 0.0) {
            return Err(Error::InvalidConfig("loss weights must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "learning rate and batch size must be positive".into(),
            ));
        }
        if !(self.positive_threshold > 0.0 && self.positive_threshold < 1.0) {
            return Err(Error::InvalidConfig(
                "positive threshold must lie in (0, 1)".into(),
            ));
        }
        if !(self.max_dist > 0.0) {
            return Err(Error::InvalidConfig("max_dist must be positive".into()));
        }
        Ok(())
    }

    /// Total spatial downsample factor D.
    pub fn downsample(&self) -> usize {
        self.conv_stack.iter().map(|&(_, _, s)| s).product()
    }
}

/// All learnable parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    pub stack: Vec<ConvLayer>,
    pub score_head: ConvLayer,
    pub dist_head: ConvLayer,
}

impl NetParams {
    /// Random initialization: He-scaled normals in the ReLU stack, smaller
    /// fan-in scaling for the linear heads, zero biases.
    pub fn init(cfg: &NetConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let mut stack = Vec::with_capacity(cfg.conv_stack.len());
        let mut in_c = INPUT_CHANNELS;
        for &(out_c, k, stride) in &cfg.conv_stack {
            let mut layer = ConvLayer::zeros(in_c, out_c, k, stride);
            let std = (2.0 / (in_c * k * k) as f64).sqrt();
            let dist = Normal::new(0.0, std).expect("finite std");
            for w in &mut layer.weights {
                *w = dist.sample(rng);
            }
            stack.push(layer);
            in_c = out_c;
        }
        let mut heads = Vec::new();
        for _ in 0..2 {
            let mut head = ConvLayer::zeros(in_c, cfg.num_classes, 1, 1);
            let dist = Normal::new(0.0, (1.0 / in_c as f64).sqrt()).expect("finite std");
            for w in &mut head.weights {
                *w = dist.sample(rng);
            }
            heads.push(head);
        }
        let dist_head = heads.pop().unwrap();
        let score_head = heads.pop().unwrap();
        Ok(NetParams {
            stack,
            score_head,
            dist_head,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for layer in self.layers() {
            layer.validate()?;
        }
        if !self.all_finite() {
            return Err(Error::NonFinite("network parameters".into()));
        }
        let feat = self.stack.last().map(|l| l.out_c).unwrap_or(0);
        if self.score_head.in_c != feat || self.dist_head.in_c != feat {
            return Err(Error::InvalidConfig(
                "head input channels do not match the feature stack".into(),
            ));
        }
        Ok(())
    }

    fn layers(&self) -> impl Iterator<Item = &ConvLayer> {
        self.stack.iter().chain([&self.score_head, &self.dist_head])
    }

    pub fn zeros_like(&self) -> NetParams {
        let zero = |l: &ConvLayer| ConvLayer::zeros(l.in_c, l.out_c, l.k, l.stride);
        NetParams {
            stack: self.stack.iter().map(zero).collect(),
            score_head: zero(&self.score_head),
            dist_head: zero(&self.dist_head),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// `self += scale * other`, elementwise over every parameter.
    pub fn axpy(&mut self, scale: f64, other: &NetParams) {
        let pairs = self
            .stack
            .iter_mut()
            .chain([&mut self.score_head, &mut self.dist_head])
            .zip(
                other
                    .stack
                    .iter()
                    .chain([&other.score_head, &other.dist_head]),
            );
        for (a, b) in pairs {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += scale * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += scale * y;
            }
        }
    }

    pub fn num_values(&self) -> usize {
        self.layers().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_values());
        for l in self.layers() {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_values() {
            return Err(Error::InvalidConfig(format!(
                "parameter vector length {} != {}",
                values.len(),
                self.num_values()
            )));
        }
        let mut at = 0;
        for l in self
            .stack
            .iter_mut()
            .chain([&mut self.score_head, &mut self.dist_head])
        {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&values[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&values[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    /// Pixels of context one output cell sees (the stack's receptive field).
    pub fn receptive_field(&self) -> usize {
        let mut rf = 1;
        let mut jump = 1;
        for l in &self.stack {
            rf += (l.k - 1) * jump;
            jump *= l.stride;
        }
        rf
    }

    pub fn downsample(&self) -> usize {
        self.stack.iter().map(|l| l.stride).product()
    }
}

/// Network outputs for one image.
#[derive(Debug, Clone)]
pub struct Heads {
    pub score_maps: Tensor3,
    /// Global max per class map.
    pub pooled_scores: [f64; 3],
    /// (row, col) of each max, first occurrence in row-major order.
    pub score_argmax: [(usize, usize); 3],
    pub distance_map: Tensor3,
    /// Distance read at the score argmax cell, per class.
    pub pooled_distance: [f64; 3],
    /// Softmax over pooled scores.
    pub top1_probs: [f64; 3],
}

fn forward_tensor(params: &NetParams, x: &Tensor3) -> Result<(Vec<Tensor3>, Heads)> {
    let mut acts: Vec<Tensor3> = Vec::with_capacity(params.stack.len());
    for (i, layer) in params.stack.iter().enumerate() {
        let input = if i == 0 { x } else { &acts[i - 1] };
        acts.push(layer.forward(input).relu());
    }
    let features = acts.last().expect("validated nonempty stack");
    let score_maps = params.score_head.forward(features);
    let distance_map = params.dist_head.forward(features);

    let mut pooled_scores = [0.0; 3];
    let mut score_argmax = [(0usize, 0usize); 3];
    let mut pooled_distance = [0.0; 3];
    for k in 0..3 {
        let (v, at) = score_maps.channel_max(k);
        pooled_scores[k] = v;
        score_argmax[k] = at;
        pooled_distance[k] = distance_map.get(k, at.0, at.1);
    }
    if !pooled_scores
        .iter()
        .chain(&pooled_distance)
        .all(|v| v.is_finite())
    {
        return Err(Error::NonFinite("network activations".into()));
    }
    let m = pooled_scores
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let exps = pooled_scores.map(|v| (v - m).exp());
    let sum: f64 = exps.iter().sum();
    let top1_probs = exps.map(|e| e / sum);

    Ok((
        acts,
        Heads {
            score_maps,
            pooled_scores,
            score_argmax,
            distance_map,
            pooled_distance,
            top1_probs,
        },
    ))
}

fn check_min_size(params: &NetParams, img: &Image) -> Result<()> {
    let rf = params.receptive_field();
    if img.width < rf || img.height < rf {
        return Err(Error::ImageTooSmall {
            width: img.width,
            height: img.height,
            view_w: rf,
            view_h: rf,
        });
    }
    Ok(())
}

/// Run the net on an image of any size at or above one receptive field.
pub fn forward(params: &NetParams, img: &Image) -> Result<Heads> {
    check_min_size(params, img)?;
    let x = Tensor3::from_image(img);
    forward_tensor(params, &x).map(|(_, heads)| heads)
}

/// Analytic gradient of the weighted loss for one view.
pub fn backward(
    params: &NetParams,
    view: &ViewSample,
    cfg: &NetConfig,
) -> Result<(NetParams, LossBreakdown)> {
    let targets = ViewTargets::from_sample(view)?;
    check_min_size(params, &view.crop)?;
    let x = Tensor3::from_image(&view.crop);
    backward_on(params, &x, &targets, cfg.loss_weights)
}

fn backward_on(
    params: &NetParams,
    x: &Tensor3,
    targets: &ViewTargets,
    weights: (f64, f64, f64),
) -> Result<(NetParams, LossBreakdown)> {
    let (acts, heads) = forward_tensor(params, x)?;
    let breakdown = total_loss(
        &heads.pooled_scores,
        &heads.pooled_distance,
        targets,
        weights,
    )?;
    let (gf, gd) = total_loss_grads(
        &heads.pooled_scores,
        &heads.pooled_distance,
        targets,
        weights,
    )?;

    // Pooling backward: all gradient lands on the argmax cell. The distance
    // readout shares the score argmax, so its gradient routes there too.
    let mut gscore = Tensor3::new(heads.score_maps.c, heads.score_maps.h, heads.score_maps.w);
    let mut gdist = Tensor3::new(gscore.c, gscore.h, gscore.w);
    for k in 0..3 {
        let (r, c) = heads.score_argmax[k];
        let i = gscore.idx(k, r, c);
        gscore.data[i] = gf[k];
        gdist.data[i] = gd[k];
    }

    let mut grads = params.zeros_like();
    let features = acts.last().unwrap();
    let sh = &mut grads.score_head;
    let mut gfeat = params
        .score_head
        .backward(features, &gscore, &mut sh.weights, &mut sh.bias);
    let dh = &mut grads.dist_head;
    let gfeat_d = params
        .dist_head
        .backward(features, &gdist, &mut dh.weights, &mut dh.bias);
    for (a, b) in gfeat.data.iter_mut().zip(&gfeat_d.data) {
        *a += b;
    }

    let mut g = gfeat;
    for i in (0..params.stack.len()).rev() {
        let g_pre = Tensor3::relu_backward(&acts[i], &g);
        let input = if i == 0 { x } else { &acts[i - 1] };
        let gl = &mut grads.stack[i];
        g = params.stack[i].backward(input, &g_pre, &mut gl.weights, &mut gl.bias);
    }
    Ok((grads, breakdown))
}

/// Windowed mean of the branch losses during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWindow {
    pub step: usize,
    pub multilabel: f64,
    pub distance: f64,
    pub top1: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetParams,
    pub steps_run: usize,
    /// Step at which a non-finite loss or update appeared; the params are
    /// the last finite state before it.
    pub diverged_at: Option<usize>,
    pub loss_history: Vec<LossWindow>,
}

const LOSS_WINDOW: usize = 500;

/// SGD over streamed epochs: `rounds x iterations` parameter updates, each
/// from `batch_size` consecutive views. Returns the final parameters, or on
/// divergence stops early with the last finite ones.
pub fn train<F>(
    annotations: &[PartialAffordance],
    mut load: F,
    cfg: &NetConfig,
    sampler_cfg: &SamplerConfig,
) -> Result<TrainOutcome>
where
    F: FnMut(usize) -> Result<Image>,
{
    cfg.validate()?;
    sampler_cfg.validate()?;
    if annotations.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    let mut init_rng = seeded_rng(cfg.seed);
    let mut params = NetParams::init(cfg, &mut init_rng)?;
    let mut epoch_rng = seeded_rng(sampler_cfg.seed);

    let mut queue: Vec<EpochItem> = Vec::new();
    let next_view =
        |rng: &mut ChaCha8Rng, queue: &mut Vec<EpochItem>, load: &mut F| -> Result<ViewSample> {
            if queue.is_empty() {
                let mut plan = plan_epoch(annotations, sampler_cfg, rng);
                if plan.is_empty() {
                    return Err(Error::InvalidConfig(
                        "epoch plan is empty; keep ratio too low for this dataset".into(),
                    ));
                }
                plan.reverse(); // consume from the back in stream order
                *queue = plan;
            }
            let item = queue.pop().unwrap();
            let img = load(item.frame)?;
            realize_view(&img, &annotations[item.frame], &item, sampler_cfg, rng)
        };

    let mut history = Vec::new();
    let mut window = [0.0f64; 4];
    let mut window_n = 0usize;
    let mut step = 0usize;

    for _round in 0..cfg.rounds {
        for _ in 0..cfg.iterations {
            let mut batch_grads = params.zeros_like();
            let mut batch_loss = LossBreakdown::default();
            for _ in 0..cfg.batch_size {
                let view = next_view(&mut epoch_rng, &mut queue, &mut load)?;
                let (grads, breakdown) = match backward(&params, &view, cfg) {
                    Ok(v) => v,
                    // Blown-up activations are a divergence, not an I/O
                    // failure: stop and hand back the last finite state.
                    Err(Error::NonFinite(_)) => {
                        return Ok(TrainOutcome {
                            params,
                            steps_run: step,
                            diverged_at: Some(step),
                            loss_history: history,
                        });
                    }
                    Err(e) => return Err(e),
                };
                batch_grads.axpy(1.0, &grads);
                batch_loss.multilabel += breakdown.multilabel;
                batch_loss.distance += breakdown.distance;
                batch_loss.top1 += breakdown.top1;
                batch_loss.total += breakdown.total;
            }
            let inv = 1.0 / cfg.batch_size as f64;
            if !batch_loss.total.is_finite() {
                return Ok(TrainOutcome {
                    params,
                    steps_run: step,
                    diverged_at: Some(step),
                    loss_history: history,
                });
            }
            let before = params.clone();
            params.axpy(-cfg.learning_rate * inv, &batch_grads);
            if !params.all_finite() {
                return Ok(TrainOutcome {
                    params: before,
                    steps_run: step,
                    diverged_at: Some(step),
                    loss_history: history,
                });
            }
            step += 1;
            window[0] += batch_loss.multilabel * inv;
            window[1] += batch_loss.distance * inv;
            window[2] += batch_loss.top1 * inv;
            window[3] += batch_loss.total * inv;
            window_n += 1;
            if window_n == LOSS_WINDOW {
                let n = window_n as f64;
                history.push(LossWindow {
                    step,
                    multilabel: window[0] / n,
                    distance: window[1] / n,
                    top1: window[2] / n,
                    total: window[3] / n,
                });
                window = [0.0; 4];
                window_n = 0;
            }
        }
    }
    if window_n > 0 {
        let n = window_n as f64;
        history.push(LossWindow {
            step,
            multilabel: window[0] / n,
            distance: window[1] / n,
            top1: window[2] / n,
            total: window[3] / n,
        });
    }
    Ok(TrainOutcome {
        params,
        steps_run: step,
        diverged_at: None,
        loss_history: history,
    })
}

/// Whole-image inference. Per class: present when the sigmoid of the pooled
/// score clears the threshold; the attention pixel is the center of the
/// argmax cell's D x D block; the distance reads the distance map at that
/// cell.
pub fn infer_full(
    params: &NetParams,
    img: &Image,
    cfg: &NetConfig,
    frame_id: &str,
) -> Result<CompleteAffordance> {
    let heads = forward(params, img)?;
    let d = params.downsample();
    let mut classes: [ClassPrediction; 3] = Default::default();
    for k in 0..3 {
        let score = sigmoid(heads.pooled_scores[k]);
        let present = score > cfg.positive_threshold;
        let (r, c) = heads.score_argmax[k];
        classes[k] = ClassPrediction {
            present,
            score,
            attention_center: present.then(|| ((d * c + d / 2) as f64, (d * r + d / 2) as f64)),
            distance: present.then(|| heads.pooled_distance[k]),
        };
    }
    Ok(CompleteAffordance {
        frame_id: frame_id.to_string(),
        classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hdphmm::Action;
    use crate::sampler::ViewType;
    use rand::Rng;

    fn tiny_config() -> NetConfig {
        NetConfig {
            conv_stack: vec![(2, 3, 2), (2, 3, 2)],
            ..NetConfig::default()
        }
    }

    fn random_image(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Image {
        let mut img = Image::new(w, h, 3);
        for v in &mut img.values {
            *v = rng.random_range(0.0..1.0);
        }
        img
    }

    fn standard_view(img: Image, class: Action, distance: f64) -> ViewSample {
        let mut label_vector = [0i8; 3];
        label_vector[class.index()] = 1;
        ViewSample {
            crop: img,
            view_type: ViewType::Standard,
            label_vector,
            attention_in_view: Some((4.0, 4.0)),
            distance_label: Some(distance),
        }
    }

    #[test]
    fn map_shapes_follow_the_downsample_factor() {
        let cfg = NetConfig::default();
        assert_eq!(cfg.downsample(), 16);
        let mut rng = seeded_rng(40);
        let params = NetParams::init(&cfg, &mut rng).unwrap();
        assert_eq!(params.receptive_field(), 31);

        let square = forward(&params, &random_image(224, 224, &mut rng)).unwrap();
        assert_eq!(
            (
                square.score_maps.c,
                square.score_maps.h,
                square.score_maps.w
            ),
            (3, 14, 14)
        );
        let full = forward(&params, &random_image(628, 314, &mut rng)).unwrap();
        assert_eq!(
            (full.score_maps.c, full.score_maps.h, full.score_maps.w),
            (3, 20, 40)
        );
        assert_eq!(
            (full.distance_map.h, full.distance_map.w),
            (full.score_maps.h, full.score_maps.w)
        );
    }

    #[test]
    fn pooled_values_are_exact_maxima_and_top1_is_a_simplex() {
        let cfg = NetConfig::default();
        let mut rng = seeded_rng(41);
        let params = NetParams::init(&cfg, &mut rng).unwrap();
        let heads = forward(&params, &random_image(224, 224, &mut rng)).unwrap();
        for k in 0..3 {
            let plane_max = heads.score_maps.channel_max(k).0;
            assert_eq!(heads.pooled_scores[k], plane_max);
            let (r, c) = heads.score_argmax[k];
            assert_eq!(heads.score_maps.get(k, r, c), plane_max);
        }
        let sum: f64 = heads.top1_probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(heads.top1_probs.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = tiny_config();
        let mut rng = seeded_rng(42);
        let params = NetParams::init(&cfg, &mut rng).unwrap();
        let img = random_image(32, 24, &mut rng);
        let a = forward(&params, &img).unwrap();
        let b = forward(&params, &img).unwrap();
        assert_eq!(a.score_maps, b.score_maps);
        assert_eq!(a.pooled_scores, b.pooled_scores);
        assert_eq!(a.score_argmax, b.score_argmax);
    }

    #[test]
    fn aligned_crops_reproduce_interior_cells_and_never_beat_the_full_max() {
        let cfg = NetConfig::default();
        let mut rng = seeded_rng(43);
        let params = NetParams::init(&cfg, &mut rng).unwrap();
        let img = random_image(628, 314, &mut rng);
        let full = forward(&params, &img).unwrap();

        let d = cfg.downsample();
        let (c0, r0) = (5, 3); // crop offset in grid cells
        let crop = img.crop(c0 * d, r0 * d, 224, 224);
        let heads = forward(&params, &crop).unwrap();
        for k in 0..3 {
            for r in 1..heads.score_maps.h - 1 {
                for c in 1..heads.score_maps.w - 1 {
                    let v = heads.score_maps.get(k, r, c);
                    // Interior cells see identical receptive fields.
                    assert_eq!(v, full.score_maps.get(k, r + r0, c + c0));
                    assert!(v <= full.pooled_scores[k]);
                }
            }
        }
    }

    #[test]
    fn hand_built_params_drive_inference_decisions() {
        let cfg = NetConfig::default();
        let mut rng = seeded_rng(44);
        let mut params = NetParams::init(&cfg, &mut rng).unwrap();
        // Kill the heads' weights: maps become pure bias planes.
        params.score_head.weights.fill(0.0);
        params.dist_head.weights.fill(0.0);
        params.score_head.bias = vec![5.0, -10.0, 2.0];
        params.dist_head.bias = vec![7.5, 1.0, 3.0];
        let img = random_image(628, 314, &mut rng);
        let out = infer_full(&params, &img, &cfg, "f7").unwrap();
        assert_eq!(out.frame_id, "f7");

        // sigmoid(5) > 0.9: present, constant map ties at the first cell.
        let left = &out.classes[0];
        assert!(left.present);
        assert_eq!(left.attention_center, Some((8.0, 8.0)));
        assert_eq!(left.distance, Some(7.5));
        // sigmoid(-10) and sigmoid(2) = 0.88 both stay below 0.9.
        assert!(!out.classes[1].present);
        assert!(out.classes[1].attention_center.is_none());
        assert!(!out.classes[2].present);
    }

    #[test]
    fn attention_pixel_is_the_argmax_cell_center() {
        let cfg = NetConfig::default();
        let mut rng = seeded_rng(45);
        let mut params = NetParams::init(&cfg, &mut rng).unwrap();
        params.score_head.bias = vec![9.0, 0.0, 0.0];
        let img = random_image(628, 314, &mut rng);
        let heads = forward(&params, &img).unwrap();
        let (r, c) = heads.score_argmax[0];
        let out = infer_full(&params, &img, &cfg, "f").unwrap();
        assert_eq!(
            out.classes[0].attention_center,
            Some(((16 * c + 8) as f64, (16 * r + 8) as f64))
        );
    }

    fn fd_check(weights: (f64, f64, f64), seed: u64) {
        let cfg = NetConfig {
            loss_weights: weights,
            ..tiny_config()
        };
        let mut rng = seeded_rng(seed);
        let params = NetParams::init(&cfg, &mut rng).unwrap();
        let img = random_image(12, 12, &mut rng);
        let x = Tensor3::from_image(&img);
        let targets = ViewTargets {
            multilabel: [1, 0, -1],
            distance: [6.0, loss::DIST_NONE, loss::DIST_NONE],
            top1: [1, -1, -1],
        };

        let (grads, _) = backward_on(&params, &x, &targets, cfg.loss_weights).unwrap();
        let analytic = grads.flatten();
        let theta = params.flatten();
        let h = 1e-4;
        let mut worst = 0.0f64;
        for i in 0..theta.len() {
            let mut tp = theta.clone();
            tp[i] += h;
            let mut tm = theta.clone();
            tm[i] -= h;
            let mut pp = params.clone();
            pp.set_flat(&tp).unwrap();
            let mut pm = params.clone();
            pm.set_flat(&tm).unwrap();
            let lp = {
                let (_, heads) = forward_tensor(&pp, &x).unwrap();
                total_loss(
                    &heads.pooled_scores,
                    &heads.pooled_distance,
                    &targets,
                    cfg.loss_weights,
                )
                .unwrap()
                .total
            };
            let lm = {
                let (_, heads) = forward_tensor(&pm, &x).unwrap();
                total_loss(
                    &heads.pooled_scores,
                    &heads.pooled_distance,
                    &targets,
                    cfg.loss_weights,
                )
                .unwrap()
                .total
            };
            let fd = (lp - lm) / (2.0 * h);
            let rel = (analytic[i] - fd).abs() / (analytic[i].abs() + 1e-8);
            worst = worst.max(rel);
            assert!(
                rel < 1e-3,
                "param {i}: analytic {} vs fd {fd}, rel {rel}",
                analytic[i]
            );
        }
        assert!(worst.is_finite());
    }

    #[test]
    fn gradients_match_finite_differences_multilabel_branch() {
        fd_check((1.0, 1e-12, 1e-12), 50);
    }

    #[test]
    fn gradients_match_finite_differences_distance_branch() {
        fd_check((1e-12, 1.0, 1e-12), 51);
    }

    #[test]
    fn gradients_match_finite_differences_top1_branch() {
        fd_check((1e-12, 1e-12, 1.0), 52);
    }

    #[test]
    fn gradients_match_finite_differences_combined() {
        fd_check((1.0, 0.1, 1.0), 53);
    }

    #[test]
    fn all_unknown_targets_yield_zero_gradient_everywhere() {
        let cfg = tiny_config();
        let mut rng = seeded_rng(54);
        let params = NetParams::init(&cfg, &mut rng).unwrap();
        let img = random_image(16, 16, &mut rng);
        let x = Tensor3::from_image(&img);
        let targets = ViewTargets {
            multilabel: [0; 3],
            distance: [loss::DIST_NONE; 3],
            top1: [0; 3],
        };
        let (grads, breakdown) = backward_on(&params, &x, &targets, cfg.loss_weights).unwrap();
        assert!((breakdown.total - 3.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!(grads.flatten().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn scaling_loss_weights_scales_the_gradient() {
        let cfg = tiny_config();
        let mut rng = seeded_rng(55);
        let params = NetParams::init(&cfg, &mut rng).unwrap();
        let img = random_image(16, 16, &mut rng);
        let x = Tensor3::from_image(&img);
        let targets = ViewTargets {
            multilabel: [1, 0, -1],
            distance: [4.0, loss::DIST_NONE, loss::DIST_NONE],
            top1: [1, -1, -1],
        };
        let (g1, _) = backward_on(&params, &x, &targets, (1.0, 0.1, 1.0)).unwrap();
        let (g3, _) = backward_on(&params, &x, &targets, (3.0, 0.3, 3.0)).unwrap();
        for (a, b) in g1.flatten().iter().zip(g3.flatten()) {
            assert!((3.0 * a - b).abs() < 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn training_descends_and_is_seed_deterministic() {
        // A toy dataset the sampler can crop: 64x64 images, 24x24 views
        // (big enough that crops avoiding the safe zone exist).
        let sampler_cfg = SamplerConfig {
            view_size: (24, 24),
            safe_zone: (12, 8),
            straight_keep_ratio: 1.0,
            mirror_prob: 0.5,
            seed: 7,
        };
        let cfg = NetConfig {
            conv_stack: vec![(4, 3, 2), (4, 3, 2)],
            learning_rate: 5e-3,
            iterations: 120,
            rounds: 1,
            max_dist: 15.0,
            seed: 3,
            ..NetConfig::default()
        };
        let mut rng = seeded_rng(56);
        let mut images = Vec::new();
        let mut annotations = Vec::new();
        for i in 0..6 {
            let mut img = Image::new(64, 64, 3);
            let class = [Action::Left, Action::Straight, Action::Right][i % 3];
            for y in 0..64 {
                for x in 0..64 {
                    // Class-dependent planted pattern plus noise.
                    let signal = match class {
                        Action::Left => (x as f32) / 64.0,
                        Action::Straight => (y as f32) / 64.0,
                        Action::Right => ((64 - x) as f32) / 64.0,
                    };
                    for c in 0..3 {
                        let noise: f32 = rng.random_range(0.0..0.2);
                        img.set(c, y, x, signal + noise);
                    }
                }
            }
            let mut label_vector = [0i8; 3];
            label_vector[class.index()] = 1;
            annotations.push(PartialAffordance {
                frame_id: format!("t{i}"),
                known_class: class,
                label_vector,
                attention_center: (20.0, 20.0),
                distance: 5.0,
                distance_valid: true,
            });
            images.push(img);
        }

        let run = |seed: u64| {
            let cfg = NetConfig {
                seed,
                ..cfg.clone()
            };
            train(&annotations, |i| Ok(images[i].clone()), &cfg, &sampler_cfg).unwrap()
        };
        let out = run(3);
        assert_eq!(out.steps_run, 120);
        assert!(out.diverged_at.is_none());

        // Mean loss over the deterministic standard views, before vs after.
        let eval_views: Vec<ViewSample> = annotations
            .iter()
            .zip(&images)
            .map(|(a, img)| crate::sampler::sample_standard(img, a, &sampler_cfg).unwrap())
            .collect();
        let mean_loss = |p: &NetParams| -> f64 {
            eval_views
                .iter()
                .map(|v| {
                    let targets = ViewTargets::from_sample(v).unwrap();
                    let x = Tensor3::from_image(&v.crop);
                    let (_, heads) = forward_tensor(p, &x).unwrap();
                    total_loss(
                        &heads.pooled_scores,
                        &heads.pooled_distance,
                        &targets,
                        cfg.loss_weights,
                    )
                    .unwrap()
                    .total
                })
                .sum::<f64>()
                / eval_views.len() as f64
        };
        let initial = NetParams::init(
            &NetConfig {
                seed: 3,
                ..cfg.clone()
            },
            &mut seeded_rng(3),
        )
        .unwrap();
        let (before, after) = (mean_loss(&initial), mean_loss(&out.params));
        assert!(after < before, "loss did not descend: {before} -> {after}");

        let again = run(3);
        assert_eq!(out.params, again.params);
        let other = run(4);
        assert_ne!(out.params, other.params);
    }

    #[test]
    fn oversized_learning_rate_reports_divergence_with_finite_params() {
        let sampler_cfg = SamplerConfig {
            view_size: (24, 24),
            safe_zone: (12, 8),
            straight_keep_ratio: 1.0,
            mirror_prob: 0.0,
            seed: 8,
        };
        let cfg = NetConfig {
            conv_stack: vec![(4, 3, 2), (4, 3, 2)],
            learning_rate: 1e60,
            iterations: 50,
            rounds: 1,
            seed: 0,
            ..NetConfig::default()
        };
        let mut rng = seeded_rng(57);
        // The losses alone have bounded gradients, so blowing up the step
        // size is not enough: gradients scale with activations, and it is
        // un-normalized input magnitudes that let an oversized step push the
        // next forward pass past f64 range.
        let mut img = random_image(64, 64, &mut rng);
        for v in &mut img.values {
            *v = (*v + 0.1) * 1e30;
        }
        let view = standard_view(img.clone(), Action::Left, 5.0);
        let annotations = vec![PartialAffordance {
            frame_id: "d0".into(),
            known_class: Action::Left,
            label_vector: view.label_vector,
            attention_center: (20.0, 20.0),
            distance: 5.0,
            distance_valid: true,
        }];
        let out = train(&annotations, |_| Ok(img.clone()), &cfg, &sampler_cfg).unwrap();
        let at = out.diverged_at.expect("training should have diverged");
        assert!(at > 0, "expected some clean steps before the blowup");
        assert_eq!(out.steps_run, at);
        assert!(out.steps_run < 50);
        assert!(out.params.all_finite());
    }
}
