//! Synthetic annotated scenes and the ground-truth object locator.
//!
//! The locator stands in for a segmentation + text-matching knowledge base:
//! given a scene and a target label it returns the grid patches touched by
//! every matching object's bounding box.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::PatchGrid;
use crate::numeric::{RngStream, Tensor};

/// Closed object vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Rect,
    Ellipse,
    Cross,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Rect, Label::Ellipse, Label::Cross];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Rect => "rect",
            Label::Ellipse => "ellipse",
            Label::Cross => "cross",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rect" => Ok(Label::Rect),
            "ellipse" => Ok(Label::Ellipse),
            "cross" => Ok(Label::Cross),
            other => Err(Error::Vocabulary(other.to_string())),
        }
    }
}

/// Pixel rectangle `[x, x+w) × [y, y+h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BBox {
    pub fn contains(&self, px: usize, py: usize) -> bool {
        px >= self.x && px < self.x + self.w && py >= self.y && py < self.y + self.h
    }

    pub fn overlaps(&self, other: &BBox) -> bool {
        self.x < other.x + other.w
            && other.x < self.x + self.w
            && self.y < other.y + other.h
            && other.y < self.y + self.h
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneObject {
    pub label: Label,
    pub bbox: BBox,
}

/// Image `C×H×W` in `[0, 1]` with exact object annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    pub image: Tensor,
    pub objects: Vec<SceneObject>,
}

impl Scene {
    /// Validates bounds, box sizes and pixel range.
    pub fn new(id: impl Into<String>, image: Tensor, objects: Vec<SceneObject>) -> Result<Self> {
        let [_, h, w] = image.shape()[..] else {
            return Err(Error::Dimension(format!(
                "scene image must be C×H×W, got {:?}",
                image.shape()
            )));
        };
        if image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Contract("scene pixels must lie in [0, 1]".into()));
        }
        for o in &objects {
            let b = o.bbox;
            if b.w == 0 || b.h == 0 || b.x + b.w > w || b.y + b.h > h {
                return Err(Error::Contract(format!(
                    "bbox [{}, {}, {}, {}] of `{}` lies outside the {w}x{h} image",
                    b.x, b.y, b.w, b.h, o.label
                )));
            }
        }
        Ok(Self {
            id: id.into(),
            image,
            objects,
        })
    }

    pub fn channels(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    /// Label of the first annotated object, the default locate target.
    pub fn primary_label(&self) -> Option<Label> {
        self.objects.first().map(|o| o.label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundFamily {
    Flat,
    Stripes,
    Checker,
    Noise,
    /// One of the above, chosen per scene.
    Mixed,
}

impl FromStr for BackgroundFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(Self::Flat),
            "stripes" => Ok(Self::Stripes),
            "checker" => Ok(Self::Checker),
            "noise" => Ok(Self::Noise),
            "mixed" => Ok(Self::Mixed),
            other => Err(Error::Config(format!("unknown background family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub size: usize,
    pub channels: usize,
    pub patch: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_object_size: usize,
    pub max_object_size: usize,
    pub background: BackgroundFamily,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            size: 32,
            channels: 3,
            patch: 4,
            min_objects: 1,
            max_objects: 2,
            min_object_size: 8,
            max_object_size: 14,
            background: BackgroundFamily::Mixed,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || !self.size.is_multiple_of(self.patch) {
            return Err(Error::Config(format!(
                "image size {} is not divisible by patch size {}",
                self.size, self.patch
            )));
        }
        if !(self.channels == 1 || self.channels == 3) {
            return Err(Error::Config("scene channels must be 1 or 3".into()));
        }
        if self.min_objects > self.max_objects {
            return Err(Error::Config("min_objects exceeds max_objects".into()));
        }
        if self.min_object_size == 0 || self.min_object_size > self.max_object_size {
            return Err(Error::Config("object size range is empty".into()));
        }
        if self.max_objects > 0 && self.min_object_size > self.size {
            return Err(Error::Config(format!(
                "objects of at least {} px cannot fit a {} px image",
                self.min_object_size, self.size
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<PatchGrid> {
        PatchGrid::new(self.channels, self.size, self.size, self.patch)
    }
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn random_color(rng: &mut RngStream, channels: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..channels).map(|_| lo + (hi - lo) * rng.uniform()).collect()
}

/// Background texture as `C×H×W` data, unquantized.
fn paint_background(rng: &mut RngStream, family: BackgroundFamily, c: usize, size: usize) -> Vec<f64> {
    let family = match family {
        BackgroundFamily::Mixed => [
            BackgroundFamily::Flat,
            BackgroundFamily::Stripes,
            BackgroundFamily::Checker,
            BackgroundFamily::Noise,
        ][rng.below(4)],
        f => f,
    };
    let base = random_color(rng, c, 0.25, 0.65);
    let alt = random_color(rng, c, 0.25, 0.65);
    let period = 2 + rng.below(7);
    let horizontal = rng.bernoulli(0.5);
    let grain = 0.02 + 0.03 * rng.uniform();
    let mut img = vec![0.0; c * size * size];
    for y in 0..size {
        for x in 0..size {
            let t = match family {
                BackgroundFamily::Flat => 0.0,
                BackgroundFamily::Stripes => {
                    let coord = if horizontal { y } else { x };
                    ((coord / period) % 2) as f64
                }
                BackgroundFamily::Checker => (((x / period) + (y / period)) % 2) as f64,
                BackgroundFamily::Noise => rng.uniform(),
                BackgroundFamily::Mixed => unreachable!(),
            };
            let n = grain * rng.normal();
            for ch in 0..c {
                img[(ch * size + y) * size + x] = base[ch] * (1.0 - t) + alt[ch] * t + n;
            }
        }
    }
    img
}

/// Painted pixel mask of a shape inside a `w×h` box.
fn shape_mask(label: Label, w: usize, h: usize) -> Vec<bool> {
    let mut m = vec![false; w * h];
    match label {
        Label::Rect => m.iter_mut().for_each(|v| *v = true),
        Label::Ellipse => {
            let (rx, ry) = (w as f64 / 2.0, h as f64 / 2.0);
            for y in 0..h {
                for x in 0..w {
                    let dx = (x as f64 + 0.5 - rx) / rx;
                    let dy = (y as f64 + 0.5 - ry) / ry;
                    m[y * w + x] = dx * dx + dy * dy <= 1.0;
                }
            }
        }
        Label::Cross => {
            let tx = (w / 3).max(1);
            let ty = (h / 3).max(1);
            let (x0, y0) = ((w - tx) / 2, (h - ty) / 2);
            for y in 0..h {
                for x in 0..w {
                    m[y * w + x] = (x >= x0 && x < x0 + tx) || (y >= y0 && y < y0 + ty);
                }
            }
        }
    }
    m
}

/// Paints one object and returns the tight bounding box of painted pixels.
fn paint_object(rng: &mut RngStream, img: &mut [f64], c: usize, size: usize, label: Label, area: BBox) -> BBox {
    let mask = shape_mask(label, area.w, area.h);
    // Saturated colours, pushed away from the mid-grey backgrounds.
    let color: Vec<f64> = (0..c)
        .map(|_| {
            if rng.bernoulli(0.5) {
                0.85 + 0.15 * rng.uniform()
            } else {
                0.1 * rng.uniform()
            }
        })
        .collect();
    let shade = 0.1 * rng.uniform();
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..area.h {
        for x in 0..area.w {
            if !mask[y * area.w + x] {
                continue;
            }
            let (px, py) = (area.x + x, area.y + y);
            let ramp = shade * (y as f64 / area.h as f64 - 0.5);
            for ch in 0..c {
                img[(ch * size + py) * size + px] = color[ch] + ramp;
            }
            x0 = x0.min(px);
            y0 = y0.min(py);
            x1 = x1.max(px);
            y1 = y1.max(py);
        }
    }
    BBox {
        x: x0,
        y: y0,
        w: x1 - x0 + 1,
        h: y1 - y0 + 1,
    }
}

fn place_objects(rng: &mut RngStream, cfg: &SceneConfig, img: &mut [f64], count: usize) -> Vec<SceneObject> {
    let mut placed: Vec<SceneObject> = Vec::with_capacity(count);
    for _ in 0..count {
        let label = Label::ALL[rng.below(3)];
        let span = cfg.max_object_size.min(cfg.size) - cfg.min_object_size;
        let mut area = BBox { x: 0, y: 0, w: 1, h: 1 };
        // Prefer non-overlapping placements; fall back to the last draw.
        for _ in 0..50 {
            let w = cfg.min_object_size + rng.below(span + 1);
            let h = cfg.min_object_size + rng.below(span + 1);
            let x = rng.below(cfg.size - w + 1);
            let y = rng.below(cfg.size - h + 1);
            area = BBox { x, y, w, h };
            if placed.iter().all(|o| !o.bbox.overlaps(&area)) {
                break;
            }
        }
        let bbox = paint_object(rng, img, cfg.channels, cfg.size, label, area);
        placed.push(SceneObject { label, bbox });
    }
    placed
}

fn finish(id: String, cfg: &SceneConfig, img: Vec<f64>, objects: Vec<SceneObject>) -> Result<Scene> {
    let data = img.into_iter().map(quantize).collect();
    let image = Tensor::new([cfg.channels, cfg.size, cfg.size], data)?;
    Scene::new(id, image, objects)
}

/// Draws one annotated scene; deterministic in `(rng, cfg)`.
pub fn generate_scene(rng: &RngStream, cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    let mut r = rng.clone();
    let mut img = paint_background(&mut r, cfg.background, cfg.channels, cfg.size);
    let count = cfg.min_objects + r.below(cfg.max_objects - cfg.min_objects + 1);
    let objects = place_objects(&mut r, cfg, &mut img, count);
    let id = format!("scene-{:016x}-{:016x}", rng.seed(), rng.stream_id());
    finish(id, cfg, img, objects)
}

/// Fraction of background patches shared by all users, as a function of the
/// number of users `K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShareProfile {
    Constant(f64),
    /// `base · exp(-rate · (K − 2))`
    Decay {
        base: f64,
        rate: f64,
    },
}

impl ShareProfile {
    pub fn fraction(&self, k: usize) -> f64 {
        let f = match *self {
            ShareProfile::Constant(f) => f,
            ShareProfile::Decay { base, rate } => base * (-rate * (k as f64 - 2.0)).exp(),
        };
        f.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelatedConfig {
    pub scene: SceneConfig,
    pub share: ShareProfile,
    /// Std-dev of per-user Gaussian jitter on shared background pixels.
    pub jitter: f64,
}

/// `K` scenes whose backgrounds share one texture realization on a
/// `share.fraction(K)` subset of patches; every scene carries its own
/// private object.
pub fn generate_correlated_batch(rng: &RngStream, k: usize, cfg: &CorrelatedConfig) -> Result<Vec<Scene>> {
    if k < 2 {
        return Err(Error::Contract(format!("correlated batch needs K >= 2, got {k}")));
    }
    let sc = &cfg.scene;
    sc.validate()?;
    let grid = sc.grid()?;
    let mut shared_rng = rng.substream(0);
    let common = paint_background(&mut shared_rng, sc.background, sc.channels, sc.size);
    let n_common = (cfg.share.fraction(k) * grid.num_patches() as f64).round() as usize;
    let mut order: Vec<usize> = (0..grid.num_patches()).collect();
    shared_rng.shuffle(&mut order);
    let mut is_common = vec![false; grid.num_patches()];
    for &p in &order[..n_common] {
        is_common[p] = true;
    }

    (0..k)
        .map(|user| {
            let mut r = rng.substream(1 + user as u64);
            let mut img = paint_background(&mut r, sc.background, sc.channels, sc.size);
            for y in 0..sc.size {
                for x in 0..sc.size {
                    if !is_common[grid.patch_at(x, y)] {
                        continue;
                    }
                    for ch in 0..sc.channels {
                        let i = (ch * sc.size + y) * sc.size + x;
                        let jitter = if cfg.jitter > 0.0 { cfg.jitter * r.normal() } else { 0.0 };
                        img[i] = common[i] + jitter;
                    }
                }
            }
            let objects = place_objects(&mut r, sc, &mut img, 1);
            let id = format!("batch-{:016x}-{:016x}-u{user}", rng.seed(), rng.stream_id());
            finish(id, sc, img, objects)
        })
        .collect()
}

/// Patch locations of every object labelled `label`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Loc {
    pub patch_indices: Vec<usize>,
    pub source_bboxes: Vec<BBox>,
}

impl Loc {
    /// Every patch of the grid.
    pub fn full(grid: &PatchGrid) -> Self {
        Self {
            patch_indices: (0..grid.num_patches()).collect(),
            source_bboxes: Vec::new(),
        }
    }

    pub fn from_indices(grid: &PatchGrid, indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let set: BTreeSet<usize> = indices.into_iter().collect();
        if let Some(&bad) = set.iter().find(|&&i| i >= grid.num_patches()) {
            return Err(Error::Contract(format!(
                "patch index {bad} outside grid of {}",
                grid.num_patches()
            )));
        }
        Ok(Self {
            patch_indices: set.into_iter().collect(),
            source_bboxes: Vec::new(),
        })
    }

    pub fn is_empty(&self) -> bool {
        self.patch_indices.is_empty()
    }

    pub fn len(&self) -> usize {
        self.patch_indices.len()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.patch_indices.binary_search(&i).is_ok()
    }
}

/// Patches sharing at least one pixel with a box labelled `label`.
pub fn locate(scene: &Scene, label: Label, grid: &PatchGrid) -> Result<Loc> {
    if grid.height() != scene.height() || grid.width() != scene.width() {
        return Err(Error::Dimension(format!(
            "grid {}x{} does not match scene {}x{}",
            grid.width(),
            grid.height(),
            scene.width(),
            scene.height()
        )));
    }
    let mut set = BTreeSet::new();
    let mut boxes = Vec::new();
    for o in scene.objects.iter().filter(|o| o.label == label) {
        boxes.push(o.bbox);
        for i in 0..grid.num_patches() {
            if grid.patch_rect(i).overlaps(&o.bbox) {
                set.insert(i);
            }
        }
    }
    Ok(Loc {
        patch_indices: set.into_iter().collect(),
        source_bboxes: boxes,
    })
}

/// Text-token entry point: unknown tokens are vocabulary errors.
pub fn locate_text(scene: &Scene, token: &str, grid: &PatchGrid) -> Result<Loc> {
    locate(scene, token.parse()?, grid)
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    objects: Vec<SidecarObject>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SidecarObject {
    label: String,
    bbox: [usize; 4],
}

fn parse_pnm(path: &Path, bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(path, "truncated PNM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        m => return Err(Error::parse(path, format!("unsupported PNM magic {m}"))),
    };
    let mut num = |what: &str| -> Result<usize> {
        token()?
            .parse()
            .map_err(|_| Error::parse(path, format!("bad PNM {what}")))
    };
    let w = num("width")?;
    let h = num("height")?;
    let maxval = num("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::parse(path, format!("only 8-bit PNM supported, maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let raster = &bytes[pos + 1..];
    if raster.len() < w * h * channels {
        return Err(Error::parse(path, "truncated PNM raster"));
    }
    let mut data = vec![0.0; channels * h * w];
    for y in 0..h {
        for x in 0..w {
            for c in 0..channels {
                let v = raster[(y * w + x) * channels + c];
                data[(c * h + y) * w + x] = v as f64 / maxval as f64;
            }
        }
    }
    Tensor::new([channels, h, w], data)
}

fn encode_pnm(image: &Tensor) -> Result<Vec<u8>> {
    let [c, h, w] = image.shape()[..] else {
        return Err(Error::Dimension("PNM export needs a C×H×W image".into()));
    };
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::Dimension(format!("PNM export needs 1 or 3 channels, got {c}"))),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = image.data()[(ch * h + y) * w + x];
                out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}

/// Writes `<id>.pgm|ppm` plus a `<id>.json` sidecar.
pub fn save_annotated(scene: &Scene, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ext = if scene.channels() == 1 { "pgm" } else { "ppm" };
    let img_path = dir.join(format!("{}.{ext}", scene.id));
    fs::write(&img_path, encode_pnm(&scene.image)?).map_err(|e| Error::io(&img_path, e))?;
    let sidecar = Sidecar {
        objects: scene
            .objects
            .iter()
            .map(|o| SidecarObject {
                label: o.label.to_string(),
                bbox: [o.bbox.x, o.bbox.y, o.bbox.w, o.bbox.h],
            })
            .collect(),
    };
    let json_path = dir.join(format!("{}.json", scene.id));
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
    Ok(img_path)
}

/// Loads every PGM/PPM in `dir` that has a same-stem JSON sidecar, sorted by
/// file name.
pub fn load_annotated(dir: &Path) -> Result<Vec<Scene>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("pgm" | "ppm")))
        .collect();
    paths.sort();
    let mut scenes = Vec::new();
    for img_path in paths {
        let json_path = img_path.with_extension("json");
        if !json_path.exists() {
            continue;
        }
        let bytes = fs::read(&img_path).map_err(|e| Error::io(&img_path, e))?;
        let image = parse_pnm(&img_path, &bytes)?;
        let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| Error::parse(&json_path, e.to_string()))?;
        let objects = sidecar
            .objects
            .into_iter()
            .map(|o| {
                let label = o
                    .label
                    .parse()
                    .map_err(|_| Error::parse(&json_path, format!("unknown label `{}`", o.label)))?;
                let [x, y, w, h] = o.bbox;
                Ok(SceneObject {
                    label,
                    bbox: BBox { x, y, w, h },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let id = img_path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let scene = Scene::new(id, image, objects).map_err(|e| Error::parse(&json_path, e.to_string()))?;
        scenes.push(scene);
    }
    Ok(scenes)
}
