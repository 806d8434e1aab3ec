//! Training view sampling.
//!
//! Each annotated frame yields three kinds of 224x224 views. The standard
//! view centers on the attention point and keeps the full label (class,
//! distance). Positive views are random crops that still contain the safe
//! zone around the attention center, so the class is known present but the
//! framing no longer encodes the distance. Negative views avoid the zone
//! entirely: the annotated class may or may not be drivable elsewhere in
//! them, so they carry only the single -1 entry for it. Straight frames are
//! heavily downsampled so the turning classes are not swamped.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::PartialAffordance;
use crate::error::{Error, Result};
use crate::synthgen::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViewType {
    Standard,
    Positive,
    Negative,
}

/// One training example: a crop plus whatever label information survives
/// the cropping.
#[derive(Debug, Clone)]
pub struct ViewSample {
    pub crop: Image,
    pub view_type: ViewType,
    /// Per-class presence: +1 known present, -1 known absent-here, 0 unknown.
    pub label_vector: [i8; 3],
    /// Attention center in crop coordinates, when it lies inside the crop.
    pub attention_in_view: Option<(f64, f64)>,
    /// Remaining distance in meters; standard views only.
    pub distance_label: Option<f64>,
}

impl ViewSample {
    pub fn validate(&self) -> Result<()> {
        let plus = self.label_vector.iter().filter(|&&v| v == 1).count();
        let minus = self.label_vector.iter().filter(|&&v| v == -1).count();
        let ok = match self.view_type {
            ViewType::Standard => plus == 1 && minus == 0 && self.distance_label.is_some(),
            ViewType::Positive => plus == 1 && minus == 0 && self.distance_label.is_none(),
            ViewType::Negative => plus == 0 && minus == 1 && self.distance_label.is_none(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidLabel(format!(
                "{:?} view with labels {:?}, distance {:?}",
                self.view_type, self.label_vector, self.distance_label
            )))
        }
    }
}

/// Pixel rectangle around the attention center that positive views must
/// contain and negative views must avoid. Half-open on right/bottom.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SafeZone {
    pub left: usize,
    pub top: usize,
    pub width: usize,
    pub height: usize,
}

impl SafeZone {
    /// Center the configured zone on `center`, clipping to the image.
    pub fn around(center: (f64, f64), img_w: usize, img_h: usize, zone: (usize, usize)) -> Self {
        let (zw, zh) = zone;
        let left = (center.0 - zw as f64 / 2.0).round().max(0.0) as usize;
        let top = (center.1 - zh as f64 / 2.0).round().max(0.0) as usize;
        let left = left.min(img_w.saturating_sub(zw));
        let top = top.min(img_h.saturating_sub(zh));
        SafeZone {
            left,
            top,
            width: zw.min(img_w),
            height: zh.min(img_h),
        }
    }

    pub fn right(&self) -> usize {
        self.left + self.width
    }

    pub fn bottom(&self) -> usize {
        self.top + self.height
    }

    fn contained_in(&self, left: usize, top: usize, w: usize, h: usize) -> bool {
        left <= self.left && top <= self.top && left + w >= self.right() && top + h >= self.bottom()
    }

    fn disjoint_from(&self, left: usize, top: usize, w: usize, h: usize) -> bool {
        left + w <= self.left || left >= self.right() || top + h <= self.top || top >= self.bottom()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Crop size (width, height).
    pub view_size: (usize, usize),
    /// Safe zone size (width, height).
    pub safe_zone: (usize, usize),
    /// Fraction of straight-labeled frames kept per epoch.
    pub straight_keep_ratio: f64,
    /// Probability of horizontally mirroring an emitted view.
    pub mirror_prob: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            view_size: (224, 224),
            safe_zone: (160, 90),
            straight_keep_ratio: 1.0 / 6.0,
            mirror_prob: 0.5,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.view_size.0 == 0 || self.view_size.1 == 0 {
            return Err(Error::InvalidConfig("view size must be positive".into()));
        }
        if self.safe_zone.0 > self.view_size.0 || self.safe_zone.1 > self.view_size.1 {
            return Err(Error::InvalidConfig(
                "safe zone cannot exceed the view size".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.straight_keep_ratio)
            || !(0.0..=1.0).contains(&self.mirror_prob)
        {
            return Err(Error::InvalidConfig(
                "keep ratio and mirror probability must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

fn check_size(img: &Image, view: (usize, usize)) -> Result<()> {
    if img.width < view.0 || img.height < view.1 {
        Err(Error::ImageTooSmall {
            width: img.width,
            height: img.height,
            view_w: view.0,
            view_h: view.1,
        })
    } else {
        Ok(())
    }
}

/// Deterministic view: horizontally centered on the attention point
/// (clamped at the borders), vertically anchored to the image bottom.
/// Keeps the full annotation, including the distance.
pub fn sample_standard(
    img: &Image,
    label: &PartialAffordance,
    cfg: &SamplerConfig,
) -> Result<ViewSample> {
    let (vw, vh) = cfg.view_size;
    check_size(img, cfg.view_size)?;
    let max_left = (img.width - vw) as f64;
    let left = (label.attention_center.0 - vw as f64 / 2.0)
        .round()
        .clamp(0.0, max_left) as usize;
    let top = img.height - vh;
    let crop = img.crop(left, top, vw, vh);
    let att = (
        label.attention_center.0 - left as f64,
        label.attention_center.1 - top as f64,
    );
    Ok(ViewSample {
        crop,
        view_type: ViewType::Standard,
        label_vector: label.label_vector,
        attention_in_view: Some(att),
        distance_label: label.distance_valid.then_some(label.distance),
    })
}

/// How many random placements to try before enumerating the valid set.
const REJECTION_CAP: usize = 1000;

fn random_crop<P: Fn(usize, usize) -> bool>(
    img: &Image,
    view: (usize, usize),
    accept: P,
    what: &str,
    rng: &mut ChaCha8Rng,
) -> Result<(usize, usize)> {
    let (vw, vh) = view;
    let lefts = img.width - vw + 1;
    let tops = img.height - vh + 1;
    for _ in 0..REJECTION_CAP {
        let l = rng.random_range(0..lefts);
        let t = rng.random_range(0..tops);
        if accept(l, t) {
            return Ok((l, t));
        }
    }
    // Uniformity fallback: enumerate every valid placement once.
    let valid: Vec<(usize, usize)> = (0..lefts)
        .flat_map(|l| (0..tops).map(move |t| (l, t)))
        .filter(|&(l, t)| accept(l, t))
        .collect();
    match valid.as_slice() {
        [] => Err(Error::NoValidPosition(what.into())),
        choices => Ok(choices[rng.random_range(0..choices.len())]),
    }
}

/// Random crop that fully contains the safe zone. The class stays known
/// present, but the distance no longer matches the framing and is dropped.
pub fn sample_positive(
    img: &Image,
    label: &PartialAffordance,
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ViewSample> {
    let (vw, vh) = cfg.view_size;
    check_size(img, cfg.view_size)?;
    let zone = SafeZone::around(label.attention_center, img.width, img.height, cfg.safe_zone);
    let (left, top) = random_crop(
        img,
        cfg.view_size,
        |l, t| zone.contained_in(l, t, vw, vh),
        "no crop contains the safe zone",
        rng,
    )?;
    let crop = img.crop(left, top, vw, vh);
    let att = (
        label.attention_center.0 - left as f64,
        label.attention_center.1 - top as f64,
    );
    Ok(ViewSample {
        crop,
        view_type: ViewType::Positive,
        label_vector: label.label_vector,
        attention_in_view: Some(att),
        distance_label: None,
    })
}

/// Random crop disjoint from the safe zone. Such a view says nothing about
/// the other classes, so the label carries only the -1 for the annotated
/// one.
pub fn sample_negative(
    img: &Image,
    label: &PartialAffordance,
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ViewSample> {
    let (vw, vh) = cfg.view_size;
    check_size(img, cfg.view_size)?;
    let zone = SafeZone::around(label.attention_center, img.width, img.height, cfg.safe_zone);
    let (left, top) = random_crop(
        img,
        cfg.view_size,
        |l, t| zone.disjoint_from(l, t, vw, vh),
        "no crop avoids the safe zone",
        rng,
    )?;
    let crop = img.crop(left, top, vw, vh);
    let mut labels = [0i8; 3];
    labels[label.known_class.index()] = -1;
    Ok(ViewSample {
        crop,
        view_type: ViewType::Negative,
        label_vector: labels,
        attention_in_view: None,
        distance_label: None,
    })
}

/// Horizontal flip: the image mirrors, left- and right-drivable swap, and
/// the attention column reflects. Distance is unaffected.
pub fn mirror(sample: &ViewSample) -> ViewSample {
    let crop = sample.crop.mirrored();
    let label_vector = [
        sample.label_vector[2],
        sample.label_vector[1],
        sample.label_vector[0],
    ];
    let attention_in_view = sample
        .attention_in_view
        .map(|(u, v)| ((sample.crop.width - 1) as f64 - u, v));
    ViewSample {
        crop,
        view_type: sample.view_type,
        label_vector,
        attention_in_view,
        distance_label: sample.distance_label,
    }
}

/// One planned view of an epoch; realized lazily so images can stay on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochItem {
    pub frame: usize,
    pub view_type: ViewType,
    pub mirrored: bool,
}

/// Decide which frames and views the epoch will visit.
///
/// Straight frames are subsampled (without replacement) to the configured
/// ratio; every retained frame emits one view of each type; each view is
/// mirrored with the configured probability; the stream order is shuffled.
pub fn plan_epoch(
    annotations: &[PartialAffordance],
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<EpochItem> {
    use crate::hdphmm::Action;

    let mut straight: Vec<usize> = Vec::new();
    let mut turning: Vec<usize> = Vec::new();
    for (i, a) in annotations.iter().enumerate() {
        match a.known_class {
            Action::Straight => straight.push(i),
            _ => turning.push(i),
        }
    }
    straight.shuffle(rng);
    let keep = (straight.len() as f64 * cfg.straight_keep_ratio).round() as usize;
    straight.truncate(keep);

    let mut items = Vec::with_capacity(3 * (straight.len() + turning.len()));
    for frame in turning.into_iter().chain(straight) {
        for view_type in [ViewType::Standard, ViewType::Positive, ViewType::Negative] {
            items.push(EpochItem {
                frame,
                view_type,
                mirrored: rng.random_bool(cfg.mirror_prob),
            });
        }
    }
    items.shuffle(rng);
    items
}

/// Realize one planned view against its source image.
pub fn realize_view(
    img: &Image,
    label: &PartialAffordance,
    item: &EpochItem,
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ViewSample> {
    let sample = match item.view_type {
        ViewType::Standard => sample_standard(img, label, cfg)?,
        ViewType::Positive => sample_positive(img, label, cfg, rng)?,
        ViewType::Negative => sample_negative(img, label, cfg, rng)?,
    };
    Ok(if item.mirrored {
        mirror(&sample)
    } else {
        sample
    })
}

/// Plan an epoch and realize it lazily through `load`.
pub fn make_epoch<'a, F>(
    annotations: &'a [PartialAffordance],
    mut load: F,
    cfg: &'a SamplerConfig,
    rng: &'a mut ChaCha8Rng,
) -> impl Iterator<Item = Result<ViewSample>> + 'a
where
    F: FnMut(usize) -> Result<Image> + 'a,
{
    let plan = plan_epoch(annotations, cfg, rng);
    plan.into_iter().map(move |item| {
        let img = load(item.frame)?;
        realize_view(&img, &annotations[item.frame], &item, cfg, rng)
    })
}
