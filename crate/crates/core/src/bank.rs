//! Damage patches cropped from annotated images, grouped by pitch bin and
//! class so that paste candidates can be drawn from images with a similar
//! perspective.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::annotation::{Annotation, DamageClass};
use crate::error::{Error, Result};
use crate::geom::BoundingBox;
use crate::perspective::{PerspectiveMap, PitchBinning};
use crate::raster::RgbImage;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BankParams {
    /// Instances whose source scale is at or below this are skipped.
    pub min_scale: f64,
    /// Minimum patch side in pixels.
    pub min_patch: usize,
}

impl Default for BankParams {
    fn default() -> Self {
        Self { min_scale: 0.05, min_patch: 2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DamageInstance {
    pub id: u32,
    pub class: DamageClass,
    pub image_id: String,
    pub bbox: BoundingBox,
    pub patch: RgbImage,
    /// Perspective scale at the source box's bottom-center row.
    pub s_src: f64,
    pub bin: usize,
}

/// One image contributing instances to the bank. Without a perspective map
/// every instance gets unit scale and lands in bin 0.
#[derive(Debug, Clone, Copy)]
pub struct BankSource<'a> {
    pub image_id: &'a str,
    pub image: &'a RgbImage,
    pub annotations: &'a [Annotation],
    pub map: Option<&'a PerspectiveMap>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BankReport {
    pub extracted: usize,
    pub too_small: usize,
    pub near_horizon: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrawProvenance {
    Direct,
    /// The requested bin was empty; drawn from this bin instead.
    Fallback(usize),
    /// Drawn from all bins at once.
    Pooled,
}

#[derive(Debug, Clone, Copy)]
pub struct Draw<'a> {
    pub instance: &'a DamageInstance,
    pub provenance: DrawProvenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DamageBank {
    instances: Vec<DamageInstance>,
    /// `groups[bin][class]` lists indices into `instances`.
    groups: Vec<[Vec<usize>; 4]>,
    params: BankParams,
    binning: PitchBinning,
}

impl DamageBank {
    /// Assemble a bank from already extracted instances.
    pub fn from_instances(instances: Vec<DamageInstance>, binning: PitchBinning, params: BankParams) -> Result<Self> {
        let bins = binning.bins();
        let mut groups: Vec<[Vec<usize>; 4]> = (0..bins).map(|_| Default::default()).collect();
        for (i, inst) in instances.iter().enumerate() {
            if inst.bin >= bins {
                return Err(Error::InvalidConfig { key: "bin", reason: "instance bin outside the binning" });
            }
            groups[inst.bin][inst.class.index()].push(i);
        }
        Ok(Self { instances, groups, params, binning })
    }

    pub fn instances(&self) -> &[DamageInstance] {
        &self.instances
    }

    pub fn into_instances(self) -> Vec<DamageInstance> {
        self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn bins(&self) -> usize {
        self.groups.len()
    }

    pub fn binning(&self) -> &PitchBinning {
        &self.binning
    }

    pub fn params(&self) -> BankParams {
        self.params
    }

    pub fn group(&self, bin: usize, class: DamageClass) -> &[usize] {
        &self.groups[bin][class.index()]
    }

    pub fn group_count(&self, bin: usize, class: DamageClass) -> usize {
        self.groups.get(bin).map_or(0, |g| g[class.index()].len())
    }

    fn bin_count(&self, bin: usize, filter: Option<DamageClass>) -> usize {
        match filter {
            Some(c) => self.groups[bin][c.index()].len(),
            None => self.groups[bin].iter().map(Vec::len).sum(),
        }
    }

    /// The `k`-th eligible instance of a bin, classes in taxonomy order.
    fn nth_in_bin(&self, bin: usize, filter: Option<DamageClass>, mut k: usize) -> &DamageInstance {
        for class in DamageClass::ALL {
            if filter.is_some_and(|c| c != class) {
                continue;
            }
            let g = &self.groups[bin][class.index()];
            if k < g.len() {
                return &self.instances[g[k]];
            }
            k -= g.len();
        }
        unreachable!("index within bin count")
    }

    /// Uniform draw over the instances of `bin`. An empty bin falls back to
    /// the nearest nonempty bin, ties toward the smaller index.
    pub fn sample<R: Rng + ?Sized>(&self, bin: usize, rng: &mut R, class_filter: Option<DamageClass>) -> Result<Draw<'_>> {
        sample_instance(self, bin, rng, class_filter)
    }

    /// Uniform draw over every instance regardless of bin.
    pub fn sample_pooled<R: Rng + ?Sized>(&self, rng: &mut R, class_filter: Option<DamageClass>) -> Result<Draw<'_>> {
        let candidates: usize = (0..self.bins()).map(|b| self.bin_count(b, class_filter)).sum();
        if candidates == 0 {
            return Err(Error::EmptyBank);
        }
        let mut k = rng.random_range(0..candidates);
        for bin in 0..self.bins() {
            let n = self.bin_count(bin, class_filter);
            if k < n {
                return Ok(Draw { instance: self.nth_in_bin(bin, class_filter, k), provenance: DrawProvenance::Pooled });
            }
            k -= n;
        }
        unreachable!("index within pooled count")
    }
}

pub fn extract_bank<'a>(
    sources: impl IntoIterator<Item = BankSource<'a>>,
    binning: &PitchBinning,
    params: BankParams,
) -> (DamageBank, BankReport) {
    let mut report = BankReport::default();
    let mut instances = Vec::new();
    for src in sources {
        let bin = src.map.map_or(0, |m| binning.assign(m.horizon_ratio()));
        for ann in src.annotations {
            let (x0, y0, w, h) = src.image.pixel_rect(&ann.bbox);
            if w < params.min_patch.max(2) || h < params.min_patch.max(2) {
                report.too_small += 1;
                continue;
            }
            let s_src = match src.map {
                Some(map) => map.scale(ann.bbox.bottom_center().1),
                None => 1.0,
            };
            if s_src <= params.min_scale {
                report.near_horizon += 1;
                continue;
            }
            instances.push(DamageInstance {
                id: instances.len() as u32,
                class: ann.class,
                image_id: src.image_id.into(),
                bbox: ann.bbox,
                patch: src.image.crop(x0, y0, w, h),
                s_src,
                bin,
            });
        }
    }
    report.extracted = instances.len();
    let bank = DamageBank::from_instances(instances, binning.clone(), params)
        .expect("bins assigned from the same binning");
    (bank, report)
}

pub fn sample_instance<'b, R: Rng + ?Sized>(
    bank: &'b DamageBank,
    bin: usize,
    rng: &mut R,
    class_filter: Option<DamageClass>,
) -> Result<Draw<'b>> {
    let bins = bank.bins();
    let bin = bin.min(bins - 1);
    let counts: Vec<usize> = (0..bins).map(|b| bank.bin_count(b, class_filter)).collect();
    let chosen = if counts[bin] > 0 {
        Some(bin)
    } else {
        // Scan outward; the lower neighbour is checked first at each distance.
        (1..bins).find_map(|d| {
            let below = bin.checked_sub(d).filter(|&b| counts[b] > 0);
            let above = Some(bin + d).filter(|&b| b < bins && counts[b] > 0);
            below.or(above)
        })
    };
    let Some(source_bin) = chosen else {
        return Err(Error::EmptyBank);
    };
    let k = rng.random_range(0..counts[source_bin]);
    let provenance = if source_bin == bin { DrawProvenance::Direct } else { DrawProvenance::Fallback(source_bin) };
    Ok(Draw { instance: bank.nth_in_bin(source_bin, class_filter, k), provenance })
}

/// Histogram of instances per bin, summed over classes.
pub fn bin_histogram(bank: &DamageBank) -> Vec<usize> {
    let mut out = vec![0; bank.bins()];
    for inst in bank.instances() {
        out[inst.bin] += 1;
    }
    out
}
