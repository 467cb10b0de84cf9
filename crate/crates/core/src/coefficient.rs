//! Piecewise-constant diffusion coefficient on the fine cells.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{CoarseEdge, EdgeAdjacency, FineGrid, Rect};

/// One cell value per global fine cell plus the per-block maxima `kappa_K`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    ncx: usize,
    ncy: usize,
    values: Vec<f64>,
    block_max: Vec<f64>,
}

impl CoefficientField {
    /// Builds a field from row-major cell values (x fastest, rows from the bottom).
    ///
    /// Values below 1 are rejected unless `shift` is set, in which case the whole
    /// field is multiplied by `1 / min` so that its minimum becomes exactly 1.
    pub fn from_values(fine: &FineGrid, mut values: Vec<f64>, shift: bool) -> Result<Self> {
        let (ncx, ncy) = fine.cell_counts();
        if values.len() != ncx * ncy {
            return Err(Error::Format(format!(
                "expected {} cell values for a {ncx}x{ncy} grid, got {}",
                ncx * ncy,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite coefficient at cell {bad}"
            )));
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        if min < 1.0 {
            if !shift {
                let cell = values.iter().position(|&v| v < 1.0).unwrap();
                return Err(Error::Domain(format!(
                    "coefficient must be >= 1, found {} at cell {cell}",
                    values[cell]
                )));
            }
            if min <= 0.0 {
                return Err(Error::Domain(format!(
                    "cannot rescale non-positive coefficient {min}"
                )));
            }
            for v in &mut values {
                *v /= min;
            }
        }
        let coarse = fine.coarse();
        let mut block_max = vec![f64::NEG_INFINITY; coarse.num_blocks()];
        for (block, m) in block_max.iter_mut().enumerate() {
            for cy in 0..fine.ny() {
                for cx in 0..fine.nx() {
                    *m = m.max(values[fine.cell_index(block, cx, cy)]);
                }
            }
        }
        Ok(CoefficientField {
            ncx,
            ncy,
            values,
            block_max,
        })
    }

    pub fn constant(fine: &FineGrid, value: f64) -> Result<Self> {
        Self::from_values(fine, vec![value; fine.num_cells()], false)
    }

    /// Samples a point-valued coefficient at fine cell centers.
    pub fn from_fn(fine: &FineGrid, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let values = (0..fine.num_cells())
            .map(|c| {
                let (x, y) = fine.cell_center(c);
                f(x, y)
            })
            .collect();
        Self::from_values(fine, values, false)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.ncx, self.ncy)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cell(&self, global_cell: usize) -> f64 {
        self.values[global_cell]
    }

    /// `kappa_K`, the maximum over the fine cells of the block.
    pub fn block_max(&self, block: usize) -> f64 {
        self.block_max[block]
    }

    pub fn block_maxima(&self) -> &[f64] {
        &self.block_max
    }

    pub fn contrast(&self) -> f64 {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        hi / lo
    }

    /// Edge weight `kappa_bar`: mean of the two block maxima on interior edges,
    /// the adjacent block maximum on boundary edges.
    pub fn kappa_bar(&self, edge: &CoarseEdge) -> f64 {
        match edge.adjacency {
            EdgeAdjacency::Interior { plus, minus } => {
                0.5 * (self.block_max[plus] + self.block_max[minus])
            }
            EdgeAdjacency::Boundary { block } => self.block_max[block],
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        CoefficientField {
            ncx: self.ncx,
            ncy: self.ncy,
            values: self.values.iter().map(|v| v * c).collect(),
            block_max: self.block_max.iter().map(|v| v * c).collect(),
        }
    }

    /// Text form: a `<ncx> <ncy>` header, then one row of values per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.ncx, self.ncy);
        for row in self.values.chunks(self.ncx) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn parse_text(fine: &FineGrid, text: &str, shift: bool) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty field file".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| Error::Format(format!("bad header token `{t}`")))
            })
            .collect::<Result<_>>()?;
        if dims.len() != 2 {
            return Err(Error::Format(format!(
                "header must hold two counts, got `{header}`"
            )));
        }
        let (ncx, ncy) = fine.cell_counts();
        if dims[0] != ncx || dims[1] != ncy {
            return Err(Error::Format(format!(
                "field is {}x{} but the fine grid has {ncx}x{ncy} cells",
                dims[0], dims[1]
            )));
        }
        let mut values = Vec::with_capacity(ncx * ncy);
        let mut rows = 0;
        for (k, line) in lines.enumerate() {
            let before = values.len();
            for t in line.split_whitespace() {
                let v = t
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("row {}: bad value `{t}`", k + 1)))?;
                values.push(v);
            }
            if values.len() - before != ncx {
                return Err(Error::Format(format!(
                    "row {} has {} values, expected {ncx}",
                    k + 1,
                    values.len() - before
                )));
            }
            rows += 1;
        }
        if rows != ncy {
            return Err(Error::Format(format!("expected {ncy} rows, got {rows}")));
        }
        Self::from_values(fine, values, shift)
    }
}

pub fn load_field(path: &Path, fine: &FineGrid, shift: bool) -> Result<CoefficientField> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::from(e).with_context(format!("reading {}", path.display())))?;
    CoefficientField::parse_text(fine, &text, shift)
        .map_err(|e| e.with_context(format!("field file {}", path.display())))
}

pub fn save_field(path: &Path, field: &CoefficientField) -> Result<()> {
    std::fs::write(path, field.to_text())?;
    Ok(())
}

/// A high-conductivity feature; cells whose center lies inside take the
/// contrast value.
#[derive(Debug, Clone, PartialEq)]
pub enum Feature {
    /// Horizontal strip `y0 <= y <= y1`, optionally limited to `[x0, x1]`.
    HChannel {
        y0: f64,
        y1: f64,
        x: Option<(f64, f64)>,
    },
    /// Vertical strip `x0 <= x <= x1`, optionally limited to `[y0, y1]`.
    VChannel {
        x0: f64,
        x1: f64,
        y: Option<(f64, f64)>,
    },
    Inclusion(Rect),
    /// `count` discs with radii uniform in `[rmin, rmax]`, drawn from the field seed.
    Blobs {
        count: usize,
        rmin: f64,
        rmax: f64,
    },
}

impl Feature {
    /// Parses the config form, e.g. `hchannel 0.3 0.33`, `inclusion 0.1 0.1 0.2 0.2`
    /// or `blobs 12 0.02 0.05`.
    pub fn parse(s: &str) -> Result<Feature> {
        let mut tokens = s.split_whitespace();
        let kind = tokens
            .next()
            .ok_or_else(|| Error::Format("empty feature".into()))?;
        let rest: Vec<&str> = tokens.collect();
        let nums = |n: &[usize]| -> Result<Vec<f64>> {
            if !n.contains(&rest.len()) {
                return Err(Error::Format(format!(
                    "`{kind}` takes {n:?} numbers, got {}",
                    rest.len()
                )));
            }
            rest.iter()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Error::Format(format!("`{kind}`: bad number `{t}`")))
                })
                .collect()
        };
        match kind {
            "hchannel" => {
                let v = nums(&[2, 4])?;
                let x = (v.len() == 4).then(|| (v[2], v[3]));
                Ok(Feature::HChannel {
                    y0: v[0],
                    y1: v[1],
                    x,
                })
            }
            "vchannel" => {
                let v = nums(&[2, 4])?;
                let y = (v.len() == 4).then(|| (v[2], v[3]));
                Ok(Feature::VChannel {
                    x0: v[0],
                    x1: v[1],
                    y,
                })
            }
            "inclusion" => {
                let v = nums(&[4])?;
                Ok(Feature::Inclusion(Rect::new(v[0], v[1], v[2], v[3])))
            }
            "blobs" => {
                let v = nums(&[3])?;
                if v[0] < 0.0 || v[0].fract() != 0.0 {
                    return Err(Error::Format(format!(
                        "blob count must be a whole number, got {}",
                        v[0]
                    )));
                }
                Ok(Feature::Blobs {
                    count: v[0] as usize,
                    rmin: v[1],
                    rmax: v[2],
                })
            }
            other => Err(Error::Format(format!("unknown feature kind `{other}`"))),
        }
    }

    fn check(&self, domain: &Rect) -> Result<()> {
        let inside = |r: &Rect| {
            r.x0 < r.x1
                && r.y0 < r.y1
                && r.x0 >= domain.x0
                && r.y0 >= domain.y0
                && r.x1 <= domain.x1
                && r.y1 <= domain.y1
        };
        let ok = match *self {
            Feature::Blobs { rmin, rmax, .. } => {
                rmin > 0.0 && rmin <= rmax && 2.0 * rmax < domain.width().min(domain.height())
            }
            _ => inside(&self.rect(domain).unwrap()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "feature `{self}` does not fit the domain"
            )))
        }
    }

    fn rect(&self, domain: &Rect) -> Option<Rect> {
        match *self {
            Feature::HChannel { y0, y1, x } => {
                let (x0, x1) = x.unwrap_or((domain.x0, domain.x1));
                Some(Rect::new(x0, y0, x1, y1))
            }
            Feature::VChannel { x0, x1, y } => {
                let (y0, y1) = y.unwrap_or((domain.y0, domain.y1));
                Some(Rect::new(x0, y0, x1, y1))
            }
            Feature::Inclusion(r) => Some(r),
            Feature::Blobs { .. } => None,
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Feature::HChannel { y0, y1, x } => {
                write!(f, "hchannel {y0} {y1}")?;
                if let Some((a, b)) = x {
                    write!(f, " {a} {b}")?;
                }
                Ok(())
            }
            Feature::VChannel { x0, x1, y } => {
                write!(f, "vchannel {x0} {x1}")?;
                if let Some((a, b)) = y {
                    write!(f, " {a} {b}")?;
                }
                Ok(())
            }
            Feature::Inclusion(r) => write!(f, "inclusion {} {} {} {}", r.x0, r.y0, r.x1, r.y1),
            Feature::Blobs { count, rmin, rmax } => write!(f, "blobs {count} {rmin} {rmax}"),
        }
    }
}

/// Geometric shape after blob placement has been resolved.
#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect(Rect),
    Disc { cx: f64, cy: f64, r: f64 },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Rect(r) => r.contains(x, y),
            Shape::Disc { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
        }
    }
}

fn resolve_shapes(features: &[Feature], domain: &Rect, seed: u64) -> Result<Vec<Shape>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shapes = Vec::new();
    for feature in features {
        feature.check(domain)?;
        match *feature {
            Feature::Blobs { count, rmin, rmax } => {
                for _ in 0..count {
                    let r = if rmax > rmin {
                        rng.gen_range(rmin..=rmax)
                    } else {
                        rmin
                    };
                    let cx = rng.gen_range(domain.x0 + r..=domain.x1 - r);
                    let cy = rng.gen_range(domain.y0 + r..=domain.y1 - r);
                    shapes.push(Shape::Disc { cx, cy, r });
                }
            }
            _ => shapes.push(Shape::Rect(feature.rect(domain).unwrap())),
        }
    }
    Ok(shapes)
}

/// Marks the cells whose center lies inside any feature.
pub fn feature_mask(fine: &FineGrid, features: &[Feature], seed: u64) -> Result<Vec<bool>> {
    let shapes = resolve_shapes(features, &fine.coarse().domain(), seed)?;
    Ok((0..fine.num_cells())
        .map(|c| {
            let (x, y) = fine.cell_center(c);
            shapes.iter().any(|s| s.contains(x, y))
        })
        .collect())
}

/// Background 1, feature cells `contrast`.
pub fn generate_channels_inclusions(
    fine: &FineGrid,
    features: &[Feature],
    contrast: f64,
    seed: u64,
) -> Result<CoefficientField> {
    if !(contrast >= 1.0) || !contrast.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "contrast must be >= 1, got {contrast}"
        )));
    }
    let mask = feature_mask(fine, features, seed)?;
    let values = mask
        .iter()
        .map(|&m| if m { contrast } else { 1.0 })
        .collect();
    CoefficientField::from_values(fine, values, false)
}

/// Built-in feature layouts on the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Thin channels crossing several blocks plus a handful of isolated inclusions.
    ChannelsInclusions,
    /// Four long channels, two in each direction, that never touch each other.
    FourChannels,
}

impl Preset {
    pub fn parse(s: &str) -> Result<Preset> {
        match s {
            "channels-inclusions" => Ok(Preset::ChannelsInclusions),
            "four-channels" => Ok(Preset::FourChannels),
            other => Err(Error::Format(format!("unknown preset `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::ChannelsInclusions => "channels-inclusions",
            Preset::FourChannels => "four-channels",
        }
    }

    pub fn features(self) -> Vec<Feature> {
        let h = |y0, y1, x0, x1| Feature::HChannel {
            y0,
            y1,
            x: Some((x0, x1)),
        };
        let v = |x0, x1, y0, y1| Feature::VChannel {
            x0,
            x1,
            y: Some((y0, y1)),
        };
        let inc = |x0, y0, x1, y1| Feature::Inclusion(Rect::new(x0, y0, x1, y1));
        match self {
            Preset::ChannelsInclusions => vec![
                h(0.22, 0.24, 0.05, 0.95),
                h(0.62, 0.64, 0.1, 0.9),
                v(0.44, 0.46, 0.3, 0.56),
                inc(0.14, 0.42, 0.17, 0.45),
                inc(0.73, 0.35, 0.76, 0.38),
                inc(0.32, 0.83, 0.35, 0.86),
                inc(0.81, 0.78, 0.84, 0.81),
                inc(0.55, 0.12, 0.58, 0.15),
            ],
            Preset::FourChannels => vec![
                h(0.25, 0.275, 0.05, 0.95),
                h(0.725, 0.75, 0.05, 0.95),
                v(0.475, 0.5, 0.325, 0.675),
                v(0.125, 0.15, 0.325, 0.675),
            ],
        }
    }
}
