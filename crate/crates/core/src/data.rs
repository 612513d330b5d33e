//! Synthetic phantoms, raster files, normalization, patch sampling and
//! dataset manifests.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, FormatError, Result};
use crate::kspace;
use crate::models::ByteReader;
use crate::tensor::{DType, Scalar, Tensor};

/// splitmix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sample `index` under `global`: `splitmix64(global ^ splitmix64(index))`.
pub fn derive_seed(global: u64, index: u64) -> u64 {
    splitmix64(global ^ splitmix64(index))
}

// ---------------------------------------------------------------------------
// Phantoms
// ---------------------------------------------------------------------------

/// Ellipse in unit image coordinates (x to the right, y downwards).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    pub rotation: f64,
    pub intensity: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.rotation.sin_cos();
        let u = (dx * c + dy * s) / self.a;
        let v = (-dx * s + dy * c) / self.b;
        u * u + v * v <= 1.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    pub ellipses: Vec<Ellipse>,
    pub background: f64,
    pub seed: u64,
}

impl PhantomSpec {
    /// 3 to 8 ellipses: one large body of intensity 0.5 to 1 and smaller
    /// additive structures inside it.
    pub fn random(height: usize, width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = rng.random_range(3..=8);
        let mut ellipses = Vec::with_capacity(count);
        ellipses.push(Ellipse {
            cx: rng.random_range(0.45..0.55),
            cy: rng.random_range(0.45..0.55),
            a: rng.random_range(0.3..0.42),
            b: rng.random_range(0.3..0.42),
            rotation: rng.random_range(0.0..std::f64::consts::PI),
            intensity: rng.random_range(0.5..1.0),
        });
        for _ in 1..count {
            let magnitude = rng.random_range(0.1..0.5);
            let sign = if rng.random_bool(0.4) { -1.0 } else { 1.0 };
            ellipses.push(Ellipse {
                cx: rng.random_range(0.3..0.7),
                cy: rng.random_range(0.3..0.7),
                a: rng.random_range(0.03..0.18),
                b: rng.random_range(0.03..0.18),
                rotation: rng.random_range(0.0..std::f64::consts::PI),
                intensity: sign * magnitude,
            });
        }
        PhantomSpec {
            height,
            width,
            ellipses,
            background: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid("phantom extents must be positive"));
        }
        if self.ellipses.is_empty() {
            return Err(Error::invalid("a phantom needs at least one ellipse"));
        }
        if self.ellipses.iter().any(|e| e.a <= 0.0 || e.b <= 0.0) {
            return Err(Error::invalid("ellipse semi-axes must be positive"));
        }
        Ok(())
    }
}

/// Renders hard-edged ellipses sampled at pixel centres, clipped to >= 0.
pub fn gen_phantom<T: Scalar>(spec: &PhantomSpec) -> Result<Tensor<T>> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    Ok(Tensor::from_fn(&[h, w], |i| {
        let y = ((i / w) as f64 + 0.5) / h as f64;
        let x = ((i % w) as f64 + 0.5) / w as f64;
        let v = spec
            .ellipses
            .iter()
            .filter(|e| e.contains(x, y))
            .fold(spec.background, |acc, e| acc + e.intensity);
        T::from_f64(v.max(0.0))
    }))
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Divides by the image maximum; non-positive maxima leave the image as is
/// with statistic 1.
pub fn normalize<T: Scalar>(img: &Tensor<T>) -> (Tensor<T>, f64) {
    let max = img.max_value().as_f64();
    // also catches NaN
    if max.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return (img.clone(), 1.0);
    }
    let s = T::from_f64(max);
    (img.map(|v| v / s), max)
}

pub fn denormalize<T: Scalar>(img: &Tensor<T>, statistic: f64) -> Tensor<T> {
    let s = T::from_f64(statistic);
    img.map(|v| v * s)
}

// ---------------------------------------------------------------------------
// Raster files
//
// "USRT" | version u32 = 1 | rank u32 | extents u32 x rank | dtype u32
//   | payload, little-endian row-major (dtype 0 = f32, 1 = f64)
// ---------------------------------------------------------------------------

pub const RASTER_MAGIC: [u8; 4] = *b"USRT";
pub const RASTER_VERSION: u32 = 1;

pub fn encode_raster<T: Scalar>(x: &Tensor<T>) -> Vec<u8> {
    let width = if T::DTYPE == DType::F32 { 4 } else { 8 };
    let mut out = Vec::with_capacity(16 + 4 * x.rank() + width * x.numel());
    out.extend_from_slice(&RASTER_MAGIC);
    out.extend_from_slice(&RASTER_VERSION.to_le_bytes());
    out.extend_from_slice(&(x.rank() as u32).to_le_bytes());
    for &d in x.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&T::DTYPE.code().to_le_bytes());
    for &v in x.data() {
        match T::DTYPE {
            DType::F32 => out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
            DType::F64 => out.extend_from_slice(&v.as_f64().to_le_bytes()),
        }
    }
    out
}

/// Decodes a raster, converting the payload to `T`.
pub fn decode_raster<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>, FormatError> {
    let mut r = ByteReader::new(bytes);
    let magic: [u8; 4] = r.take_array()?;
    if magic != RASTER_MAGIC {
        return Err(FormatError::BadMagic {
            expected: RASTER_MAGIC,
            found: magic,
        });
    }
    let version = r.u32()?;
    if version != RASTER_VERSION {
        return Err(FormatError::UnknownVersion(version));
    }
    let rank = r.u32()? as usize;
    if rank == 0 || rank > 8 {
        return Err(FormatError::MalformedHeader(format!("rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = r.u32()? as usize;
        if d == 0 {
            return Err(FormatError::MalformedHeader("zero extent".into()));
        }
        shape.push(d);
    }
    let code = r.u32()?;
    let dtype = DType::from_code(code).ok_or(FormatError::UnknownDtype(code))?;
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| FormatError::MalformedHeader("extent product overflows".into()))?;
    let width = if dtype == DType::F32 { 4 } else { 8 };
    let payload = r.take(n * width)?;
    if r.remaining() != 0 {
        return Err(FormatError::MalformedHeader(format!(
            "{} trailing bytes",
            r.remaining()
        )));
    }
    let data = payload
        .chunks_exact(width)
        .map(|c| match dtype {
            DType::F32 => T::from_f64(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64),
            DType::F64 => T::from_f64(f64::from_le_bytes(c.try_into().expect("8 bytes"))),
        })
        .collect();
    Tensor::new(&shape, data).map_err(|e| FormatError::MalformedHeader(e.to_string()))
}

pub fn save_raster<T: Scalar>(path: impl AsRef<Path>, x: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_raster(x)).map_err(|e| Error::io(path, e))
}

/// Loads a USRT raster or a binary (P5) PGM.
pub fn load_raster<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = if bytes.starts_with(b"P5") {
        decode_pgm(&bytes)
    } else {
        decode_raster(&bytes)
    };
    decoded.map_err(|e| Error::format(path, e))
}

/// Binary PGM with maxval up to 65535, scaled to `[0, 1]`.
pub fn decode_pgm<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>, FormatError> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(FormatError::MalformedHeader("pgm header ends early".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|c| c.is_ascii_digit()) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| FormatError::MalformedHeader("bad pgm header field".into()))?;
    }
    if !bytes.get(pos).is_some_and(|c| c.is_ascii_whitespace()) {
        return Err(FormatError::MalformedHeader("pgm header not terminated".into()));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(FormatError::MalformedHeader(format!(
            "pgm {width}x{height} maxval {maxval}"
        )));
    }
    let bpp = if maxval < 256 { 1 } else { 2 };
    let need = width * height * bpp;
    let payload = &bytes[pos..];
    if payload.len() < need {
        return Err(FormatError::TruncatedPayload {
            expected: need,
            found: payload.len(),
        });
    }
    let scale = maxval as f64;
    let data = payload[..need]
        .chunks_exact(bpp)
        .map(|c| {
            let v = if bpp == 1 {
                c[0] as f64
            } else {
                u16::from_be_bytes([c[0], c[1]]) as f64
            };
            T::from_f64(v / scale)
        })
        .collect();
    Tensor::new(&[height, width], data).map_err(|e| FormatError::MalformedHeader(e.to_string()))
}

/// Writes an 8-bit PGM, clipping to `[0, 1]`.
pub fn save_pgm<T: Scalar>(path: impl AsRef<Path>, img: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = img.dims2()?;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(
        img.data()
            .iter()
            .map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Patches and evaluation pairs
// ---------------------------------------------------------------------------

fn check_patch(h: usize, w: usize, patch: usize) -> Result<()> {
    if patch == 0 || !patch.is_multiple_of(4) {
        return Err(Error::invalid(format!(
            "patch size must be a positive multiple of 4, got {patch}"
        )));
    }
    if patch > h || patch > w {
        return Err(Error::shape(format!(
            "patch size {patch} exceeds image {h}x{w}"
        )));
    }
    Ok(())
}

/// Uniform top-left corners `(row, col)`.
pub fn sample_corners(
    h: usize,
    w: usize,
    patch: usize,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<(usize, usize)>> {
    check_patch(h, w, patch)?;
    Ok((0..count)
        .map(|_| {
            (
                rng.random_range(0..=h - patch),
                rng.random_range(0..=w - patch),
            )
        })
        .collect())
}

pub fn crop<T: Scalar>(img: &Tensor<T>, row: usize, col: usize, ph: usize, pw: usize) -> Result<Tensor<T>> {
    let (h, w) = img.dims2()?;
    if row + ph > h || col + pw > w {
        return Err(Error::shape(format!(
            "crop {ph}x{pw} at ({row}, {col}) leaves image {h}x{w}"
        )));
    }
    let mut data = Vec::with_capacity(ph * pw);
    for r in row..row + ph {
        data.extend_from_slice(&img.data()[r * w + col..r * w + col + pw]);
    }
    Tensor::new(&[ph, pw], data)
}

/// `count` random square patches from one image.
pub fn sample_patches<T: Scalar>(
    img: &Tensor<T>,
    patch: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Tensor<T>>> {
    let (h, w) = img.dims2()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_corners(h, w, patch, count, &mut rng)?
        .into_iter()
        .map(|(r, c)| crop(img, r, c, patch, patch))
        .collect()
}

/// A `[batch, 1, patch, patch]` tensor of patches from uniformly chosen
/// images.
pub fn sample_batch<T: Scalar>(
    images: &[Tensor<T>],
    patch: usize,
    batch: usize,
    rng: &mut impl Rng,
) -> Result<Tensor<T>> {
    if images.is_empty() || batch == 0 {
        return Err(Error::invalid("need at least one image and batch >= 1"));
    }
    let mut items = Vec::with_capacity(batch);
    for _ in 0..batch {
        let img = &images[rng.random_range(0..images.len())];
        let (h, w) = img.dims2()?;
        let (r, c) = sample_corners(h, w, patch, 1, rng)?[0];
        items.push(crop(img, r, c, patch, patch)?.reshape(&[1, patch, patch])?);
    }
    Tensor::stack(&items)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    /// Input is `f_crop(img)`, reference is `img`.
    Synthetic,
    /// Input is `img`, no reference.
    Real,
}

impl EvalMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(EvalMode::Synthetic),
            "real" => Ok(EvalMode::Real),
            other => Err(Error::invalid(format!(
                "mode must be synthetic or real, got {other:?}"
            ))),
        }
    }
}

pub fn make_eval_pair<T: Scalar>(
    img: &Tensor<T>,
    mode: EvalMode,
) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    let (h, w) = img.dims2()?;
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::shape(format!(
            "evaluation images need extents divisible by 4, got {h}x{w}"
        )));
    }
    Ok(match mode {
        EvalMode::Synthetic => (kspace::f_crop(img, 2)?, Some(img.clone())),
        EvalMode::Real => (img.clone(), None),
    })
}

// ---------------------------------------------------------------------------
// Manifests
//
//   # usrgr manifest v1
//   split <name>
//   seed <u64>
//   <id> \t <path relative to the manifest> \t <normalization statistic>
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub statistic: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub split: String,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
    /// Directory that entry paths are relative to.
    pub root: PathBuf,
}

const MANIFEST_HEADER: &str = "# usrgr manifest v1";

impl Manifest {
    pub fn file_name(split: &str) -> String {
        format!("{split}.manifest")
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{MANIFEST_HEADER}\nsplit {}\nseed {}\n", self.split, self.seed);
        for e in &self.entries {
            s.push_str(&format!("{}\t{}\t{:?}\n", e.id, e.path.display(), e.statistic));
        }
        s
    }

    pub fn parse(text: &str, root: &Path) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Config(format!("manifest line {line}: {msg}"));
        let mut split = None;
        let mut seed = None;
        let mut entries = Vec::new();
        let mut ids = HashSet::new();
        for (n, line) in text.lines().enumerate() {
            let n = n + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(v) = line.strip_prefix("split ") {
                split = Some(v.trim().to_string());
            } else if let Some(v) = line.strip_prefix("seed ") {
                seed = Some(v.trim().parse().map_err(|_| bad(n, "bad seed"))?);
            } else {
                let fields: Vec<&str> = line.split('\t').collect();
                let [id, path, stat] = fields[..] else {
                    return Err(bad(n, "expected id, path and statistic"));
                };
                if !ids.insert(id.to_string()) {
                    return Err(bad(n, &format!("duplicate id {id:?}")));
                }
                entries.push(ManifestEntry {
                    id: id.to_string(),
                    path: PathBuf::from(path),
                    statistic: stat.parse().map_err(|_| bad(n, "bad statistic"))?,
                });
            }
        }
        Ok(Manifest {
            split: split.ok_or_else(|| bad(0, "missing split"))?,
            seed: seed.ok_or_else(|| bad(0, "missing seed"))?,
            entries,
            root: root.to_path_buf(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Reads a manifest and checks that every listed file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().unwrap_or(Path::new("."));
        let m = Self::parse(&text, root)?;
        for e in &m.entries {
            let p = m.resolve(e);
            if !p.is_file() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "listed in manifest"),
                ));
            }
        }
        Ok(m)
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    /// Loads every image (normalized, as stored) in manifest order.
    pub fn load_images<T: Scalar>(&self) -> Result<Vec<Tensor<T>>> {
        self.entries
            .iter()
            .map(|e| load_raster(self.resolve(e)))
            .collect()
    }
}

/// Loads `<dir>/<split>.manifest`.
pub fn load_split(dir: impl AsRef<Path>, split: &str) -> Result<Manifest> {
    Manifest::load(dir.as_ref().join(Manifest::file_name(split)))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSpec {
    pub size: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            size: 64,
            train: 200,
            val: 20,
            test: 20,
            seed: 0,
        }
    }
}

/// Writes normalized phantoms under `dir/images/` plus one manifest per
/// split. Sample `k` (numbered across splits) uses `derive_seed(seed, k)`.
pub fn generate_dataset(dir: impl AsRef<Path>, spec: &DatasetSpec) -> Result<Vec<Manifest>> {
    let dir = dir.as_ref();
    if spec.size < 8 || !spec.size.is_multiple_of(4) {
        return Err(Error::invalid(format!(
            "phantom size must be a multiple of 4 and >= 8, got {}",
            spec.size
        )));
    }
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut index = 0u64;
    let mut manifests = Vec::new();
    for (split, count) in [("train", spec.train), ("val", spec.val), ("test", spec.test)] {
        let mut entries = Vec::with_capacity(count);
        for i in 0..count {
            let phantom = PhantomSpec::random(spec.size, spec.size, derive_seed(spec.seed, index));
            index += 1;
            let (img, statistic) = normalize(&gen_phantom::<f32>(&phantom)?);
            let id = format!("{split}-{i:04}");
            let rel = PathBuf::from("images").join(format!("{id}.usrt"));
            save_raster(dir.join(&rel), &img)?;
            entries.push(ManifestEntry {
                id,
                path: rel,
                statistic,
            });
        }
        let m = Manifest {
            split: split.to_string(),
            seed: spec.seed,
            entries,
            root: dir.to_path_buf(),
        };
        m.save(dir.join(Manifest::file_name(split)))?;
        manifests.push(m);
    }
    Ok(manifests)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centered(a: f64, b: f64, intensity: f64) -> PhantomSpec {
        PhantomSpec {
            height: 128,
            width: 128,
            ellipses: vec![Ellipse {
                cx: 0.5,
                cy: 0.5,
                a,
                b,
                rotation: 0.0,
                intensity,
            }],
            background: 0.25,
            seed: 0,
        }
    }

    #[test]
    fn zero_intensity_gives_background() {
        let img = gen_phantom::<f64>(&centered(0.3, 0.2, 0.0)).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn ellipse_area_matches_analytic() {
        let spec = centered(0.3, 0.2, 1.0);
        let img = gen_phantom::<f64>(&spec).unwrap();
        let inside = img.data().iter().filter(|&&v| v > 1.0).count() as f64;
        let analytic = std::f64::consts::PI * 0.3 * 0.2 * 128.0 * 128.0;
        assert!((inside - analytic).abs() / analytic < 0.02, "{inside} vs {analytic}");
    }

    #[test]
    fn phantoms_are_deterministic_and_have_edges() {
        for seed in 0..20 {
            let s = PhantomSpec::random(64, 64, seed);
            assert!((3..=8).contains(&s.ellipses.len()));
            let a = gen_phantom::<f32>(&s).unwrap();
            let b = gen_phantom::<f32>(&PhantomSpec::random(64, 64, seed)).unwrap();
            assert_eq!(a, b);
            assert!(a.data().iter().all(|&v| v >= 0.0));
            let jump = a
                .data()
                .windows(2)
                .map(|p| (p[1] - p[0]).abs())
                .fold(0.0f32, f32::max);
            assert!(jump >= 0.2, "seed {seed}: largest step {jump}");
        }
    }

    #[test]
    fn normalize_cases() {
        let x = Tensor::<f64>::from_f64(&[2, 2], &[1.0, 4.0, 2.0, 0.5]).unwrap();
        let (n, s) = normalize(&x);
        assert_eq!((n.max_value(), s), (1.0, 4.0));
        assert!(denormalize(&n, s).max_abs_diff(&x).unwrap() <= 1e-7);
        let z = Tensor::<f64>::zeros(&[3, 3]);
        assert_eq!(normalize(&z), (z.clone(), 1.0));
    }

    #[test]
    fn raster_round_trip_and_errors() {
        let x = Tensor::<f32>::from_fn(&[32, 32], |i| ((i * 37) % 101) as f32 / 7.0 - 3.0);
        let bytes = encode_raster(&x);
        assert_eq!(decode_raster::<f32>(&bytes).unwrap(), x);

        let y = Tensor::<f64>::from_fn(&[2, 3, 4], |i| (i as f64).sqrt() / 3.0);
        assert_eq!(decode_raster::<f64>(&encode_raster(&y)).unwrap(), y);

        let truncated = decode_raster::<f32>(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(truncated, FormatError::TruncatedPayload { .. }));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_raster::<f32>(&bad).unwrap_err(), FormatError::BadMagic { .. }));
        let mut bad = bytes.clone();
        bad[20..24].copy_from_slice(&7u32.to_le_bytes());
        assert_eq!(decode_raster::<f32>(&bad).unwrap_err(), FormatError::UnknownDtype(7));
        let mut bad = bytes;
        bad[4..8].copy_from_slice(&9u32.to_le_bytes());
        assert_eq!(decode_raster::<f32>(&bad).unwrap_err(), FormatError::UnknownVersion(9));
    }

    #[test]
    fn pgm_scaling() {
        let mut p8 = b"P5\n# comment\n2 1\n255\n".to_vec();
        p8.extend_from_slice(&[255, 51]);
        let img = decode_pgm::<f64>(&p8).unwrap();
        assert_eq!(img.shape(), &[1, 2]);
        assert_eq!(img.data(), &[1.0, 0.2]);

        let mut p16 = b"P5 1 1 65535\n".to_vec();
        p16.extend_from_slice(&[0xFF, 0xFF]);
        assert_eq!(decode_pgm::<f64>(&p16).unwrap().data(), &[1.0]);

        let short = b"P5 2 2 255\n\x01".to_vec();
        assert!(matches!(
            decode_pgm::<f64>(&short).unwrap_err(),
            FormatError::TruncatedPayload { .. }
        ));
    }

    #[test]
    fn patches() {
        let img = Tensor::<f64>::from_fn(&[16, 16], |i| i as f64);
        let full = sample_patches(&img, 16, 3, 1).unwrap();
        assert!(full.iter().all(|p| *p == img));
        assert_eq!(sample_patches(&img, 8, 5, 9).unwrap(), sample_patches(&img, 8, 5, 9).unwrap());
        assert!(sample_patches(&img, 20, 1, 0).is_err());
        assert!(sample_patches(&img, 6, 1, 0).is_err());
        let p = crop(&img, 2, 3, 4, 4).unwrap();
        assert_eq!(p.get(&[0, 0]), 35.0);
    }

    #[test]
    fn corners_are_uniform() {
        // 9 x 9 = 81 corner cells; chi-square critical value at p = 0.01 with
        // 80 degrees of freedom is 112.33
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let draws = 100_000;
        let corners = sample_corners(16, 16, 8, draws, &mut rng).unwrap();
        let mut counts = [0usize; 81];
        for (r, c) in corners {
            counts[r * 9 + c] += 1;
        }
        let expected = draws as f64 / 81.0;
        let chi2: f64 = counts
            .iter()
            .map(|&o| (o as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 112.33, "chi-square {chi2}");
    }

    #[test]
    fn eval_pairs() {
        let img = gen_phantom::<f64>(&PhantomSpec::random(64, 64, 3)).unwrap();
        let (input, reference) = make_eval_pair(&img, EvalMode::Synthetic).unwrap();
        assert_eq!(input.shape(), &[32, 32]);
        assert_eq!(reference.unwrap(), img);
        assert_eq!(input, kspace::f_crop(&img, 2).unwrap());
        let (input, reference) = make_eval_pair(&img, EvalMode::Real).unwrap();
        assert_eq!((input, reference), (img, None));
        assert!(EvalMode::parse("other").is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec {
            size: 16,
            train: 3,
            val: 1,
            test: 2,
            seed: 5,
        };
        let made = generate_dataset(dir.path(), &spec).unwrap();
        let train = load_split(dir.path(), "train").unwrap();
        assert_eq!(train, made[0]);
        let imgs = train.load_images::<f32>().unwrap();
        assert_eq!(imgs.len(), 3);
        assert!(imgs.iter().all(|i| i.max_value() == 1.0));

        let other = tempfile::tempdir().unwrap();
        generate_dataset(other.path(), &spec).unwrap();
        for e in &train.entries {
            let a = fs::read(dir.path().join(&e.path)).unwrap();
            let b = fs::read(other.path().join(&e.path)).unwrap();
            assert_eq!(a, b);
        }

        let dup = "split x\nseed 1\na\tp\t1.0\na\tq\t1.0\n";
        assert!(Manifest::parse(dup, Path::new(".")).is_err());
        fs::remove_file(dir.path().join(&train.entries[0].path)).unwrap();
        assert!(load_split(dir.path(), "train").is_err());
    }
}
