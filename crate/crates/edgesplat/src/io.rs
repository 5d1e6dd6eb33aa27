//! File formats: sketch/camera JSON, edge/alpha/depth/normal images, and the
//! scene directory layout.
//!
//! JSON is written by hand with canonical 9-significant-digit float
//! formatting so that load→save→load is a byte-level fixpoint; reading goes
//! through serde and accepts any spacing. Images use PNG (8- or 16-bit
//! grayscale for edges and alpha, 16-bit RGB for normals) and depth maps use
//! 32-bit float PFM or 16-bit PNG with a JSON sidecar holding the scale.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::Deserialize;

use crate::camera::{Camera, ROT_ORTHO_TOL_FILE};
use crate::error::{Error, Result};
use crate::image::{EdgeImage, NormalMap, ScalarField};
use crate::scene::{Scene, SceneTransform};
use crate::sketch::{ControlPointPool, Sketch, SketchKind, SketchSet};

// ---------------------------------------------------------------------------
// Canonical float formatting
// ---------------------------------------------------------------------------

/// Canonical float rendering: 9 significant digits, scientific notation.
/// Parsing a canonical string and re-rendering it reproduces the same bytes,
/// which makes every JSON writer in this module a load→save fixpoint.
pub fn fmt_float(x: f64) -> Result<String> {
    if !x.is_finite() {
        return Err(Error::contract(format!("cannot serialize non-finite value {x}")));
    }
    Ok(format!("{x:.8e}"))
}

fn fmt_vec3(v: &Vector3<f64>) -> Result<String> {
    Ok(format!("[{}, {}, {}]", fmt_float(v.x)?, fmt_float(v.y)?, fmt_float(v.z)?))
}

// ---------------------------------------------------------------------------
// Sketch files
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SketchFileIn {
    points: Vec<[f64; 3]>,
    sketches: Vec<SketchIn>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SketchIn {
    kind: String,
    ctrl: Vec<usize>,
    opacity: f64,
    scale: [f64; 3],
}

/// Serializes the live content of a sketch set: live pool points in index
/// order (ctrl indices remapped accordingly) and live sketches with their
/// mapped opacity (0,1) and scale in meters.
pub fn sketches_to_json(set: &SketchSet) -> Result<String> {
    set.validate()?;
    let mut remap = vec![usize::MAX; set.pool.len()];
    let mut points = Vec::new();
    for idx in set.pool.live_indices() {
        remap[idx] = points.len();
        points.push(set.pool.pos(idx));
    }

    let mut out = String::from("{\n  \"points\": [\n");
    for (i, p) in points.iter().enumerate() {
        let sep = if i + 1 < points.len() { "," } else { "" };
        out.push_str(&format!("    {}{}\n", fmt_vec3(p)?, sep));
    }
    out.push_str("  ],\n  \"sketches\": [\n");
    let live: Vec<usize> = set.live_sketch_indices().collect();
    for (n, &si) in live.iter().enumerate() {
        let s = &set.sketches[si];
        let kind = match s.kind {
            SketchKind::Line => "line",
            SketchKind::Bezier3 => "bezier3",
        };
        let ctrl: Vec<String> = s.ctrl.iter().map(|&c| remap[c].to_string()).collect();
        let sep = if n + 1 < live.len() { "," } else { "" };
        out.push_str(&format!(
            "    {{\"kind\": \"{kind}\", \"ctrl\": [{}], \"opacity\": {}, \"scale\": {}}}{sep}\n",
            ctrl.join(", "),
            fmt_float(s.opacity())?,
            fmt_vec3(&s.scale())?,
        ));
    }
    out.push_str("  ]\n}\n");
    Ok(out)
}

/// Parses a sketch file, rejecting unknown kinds, wrong control arity,
/// out-of-range indices, and out-of-range opacity or scale.
pub fn sketches_from_json(text: &str) -> Result<SketchSet> {
    let file: SketchFileIn = serde_json::from_str(text)?;
    let pool = ControlPointPool::from_points(
        file.points.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect(),
    );
    let mut sketches = Vec::with_capacity(file.sketches.len());
    for s in &file.sketches {
        let kind = match s.kind.as_str() {
            "line" => SketchKind::Line,
            "bezier3" => SketchKind::Bezier3,
            other => {
                return Err(Error::contract(format!(
                    "unknown sketch kind '{other}' (expected line or bezier3)"
                )))
            }
        };
        if s.ctrl.len() != kind.arity() {
            return Err(Error::contract(format!(
                "{} sketch needs {} control indices, got {}",
                s.kind,
                kind.arity(),
                s.ctrl.len()
            )));
        }
        let scale = Vector3::new(s.scale[0], s.scale[1], s.scale[2]);
        sketches.push(match kind {
            SketchKind::Line => Sketch::line(s.ctrl[0], s.ctrl[1], s.opacity, scale)?,
            SketchKind::Bezier3 => {
                Sketch::bezier3(s.ctrl[0], s.ctrl[1], s.ctrl[2], s.ctrl[3], s.opacity, scale)?
            }
        });
    }
    let set = SketchSet::new(pool, sketches);
    set.validate()?;
    Ok(set)
}

pub fn save_sketches(path: &Path, set: &SketchSet) -> Result<()> {
    fs::write(path, sketches_to_json(set)?)?;
    Ok(())
}

pub fn load_sketches(path: &Path) -> Result<SketchSet> {
    sketches_from_json(&fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// Camera files
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraIn {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
}

pub fn cameras_to_json(cameras: &[Camera]) -> Result<String> {
    let mut out = String::from("[\n");
    for (i, c) in cameras.iter().enumerate() {
        let r: Vec<String> = c
            .rot
            .transpose() // nalgebra iterates column-major; emit row-major
            .iter()
            .map(|&v| fmt_float(v))
            .collect::<Result<_>>()?;
        let sep = if i + 1 < cameras.len() { "," } else { "" };
        out.push_str(&format!(
            "  {{\"fx\": {}, \"fy\": {}, \"cx\": {}, \"cy\": {}, \"width\": {}, \"height\": {}, \"R\": [{}], \"t\": {}}}{sep}\n",
            fmt_float(c.fx)?,
            fmt_float(c.fy)?,
            fmt_float(c.cx)?,
            fmt_float(c.cy)?,
            c.width,
            c.height,
            r.join(", "),
            fmt_vec3(&c.trans)?,
        ));
    }
    out.push_str("]\n");
    Ok(out)
}

/// Parses a camera list; rotations are re-validated with the file tolerance
/// (1e-6), which absorbs the 9-digit quantization of a canonical save.
pub fn cameras_from_json(text: &str) -> Result<Vec<Camera>> {
    let file: Vec<CameraIn> = serde_json::from_str(text)?;
    file.iter()
        .map(|c| {
            let rot = Matrix3::from_row_slice(&c.r);
            let trans = Vector3::new(c.t[0], c.t[1], c.t[2]);
            Camera::with_rotation_tolerance(
                c.fx,
                c.fy,
                c.cx,
                c.cy,
                c.width,
                c.height,
                rot,
                trans,
                ROT_ORTHO_TOL_FILE,
            )
        })
        .collect()
}

pub fn save_cameras(path: &Path, cameras: &[Camera]) -> Result<()> {
    fs::write(path, cameras_to_json(cameras)?)?;
    Ok(())
}

pub fn load_cameras(path: &Path) -> Result<Vec<Camera>> {
    cameras_from_json(&fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// Grayscale PNG (edge and alpha images)
// ---------------------------------------------------------------------------

/// Output bit depth for grayscale PNG writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PngBitDepth {
    Eight,
    Sixteen,
}

impl std::str::FromStr for PngBitDepth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "8" => Ok(Self::Eight),
            "16" => Ok(Self::Sixteen),
            other => Err(Error::contract(format!("unsupported PNG bit depth '{other}'"))),
        }
    }
}

fn png_writer(path: &Path, width: u32, height: u32) -> Result<png::Encoder<'static, BufWriter<fs::File>>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let file = fs::File::create(path)?;
    Ok(png::Encoder::new(BufWriter::new(file), width, height))
}

/// Writes an edge image (values in [0,1]) as a grayscale PNG.
pub fn save_edge_png(path: &Path, img: &EdgeImage, depth: PngBitDepth) -> Result<()> {
    let mut enc = png_writer(path, img.width(), img.height())?;
    enc.set_color(png::ColorType::Grayscale);
    match depth {
        PngBitDepth::Eight => {
            enc.set_depth(png::BitDepth::Eight);
            let bytes: Vec<u8> =
                img.as_slice().iter().map(|&v| (v * 255.0).round() as u8).collect();
            enc.write_header()?.write_image_data(&bytes)?;
        }
        PngBitDepth::Sixteen => {
            enc.set_depth(png::BitDepth::Sixteen);
            let mut bytes = Vec::with_capacity(img.pixel_count() * 2);
            for &v in img.as_slice() {
                bytes.extend_from_slice(&((v * 65535.0).round() as u16).to_be_bytes());
            }
            enc.write_header()?.write_image_data(&bytes)?;
        }
    }
    Ok(())
}

fn read_gray_png(path: &Path) -> Result<(u32, u32, Vec<f64>)> {
    let decoder = png::Decoder::new(fs::File::open(path)?);
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf)?;
    if info.color_type != png::ColorType::Grayscale {
        return Err(Error::Png(format!(
            "{}: expected a grayscale PNG, got {:?}",
            path.display(),
            info.color_type
        )));
    }
    let n = (info.width * info.height) as usize;
    let data = match info.bit_depth {
        png::BitDepth::Eight => buf[..n].iter().map(|&b| b as f64 / 255.0).collect(),
        png::BitDepth::Sixteen => buf[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0)
            .collect(),
        other => {
            return Err(Error::Png(format!(
                "{}: unsupported grayscale bit depth {other:?}",
                path.display()
            )))
        }
    };
    Ok((info.width, info.height, data))
}

/// Loads an 8- or 16-bit grayscale PNG as an edge image in [0,1].
pub fn load_edge_png(path: &Path) -> Result<EdgeImage> {
    let (w, h, data) = read_gray_png(path)?;
    EdgeImage::from_data(w, h, data)
}

/// Loads an 8- or 16-bit grayscale PNG as an alpha map in [0,1].
pub fn load_alpha_png(path: &Path) -> Result<EdgeImage> {
    load_edge_png(path)
}

// ---------------------------------------------------------------------------
// Depth maps (PFM, or 16-bit PNG + JSON sidecar)
// ---------------------------------------------------------------------------

/// Writes a grayscale 32-bit float PFM (little-endian, bottom-to-top rows).
pub fn save_depth_pfm(path: &Path, depth: &ScalarField) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut out = BufWriter::new(fs::File::create(path)?);
    write!(out, "Pf\n{} {}\n-1.0\n", depth.width(), depth.height())?;
    for y in (0..depth.height()).rev() {
        for x in 0..depth.width() {
            out.write_all(&(depth.get(x, y) as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Parses a grayscale PFM. Non-finite samples are sanitized to 0 (absent
/// depth); |scale| from the header is applied as a value multiplier.
pub fn load_depth_pfm(path: &Path) -> Result<ScalarField> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let err = |msg: &str| Error::contract(format!("{}: {msg}", path.display()));

    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::contract("truncated PFM header".to_string()));
        }
        let tok = String::from_utf8_lossy(&bytes[start..pos]).into_owned();
        pos += 1; // consume the single whitespace terminating the token
        Ok(tok)
    };

    let magic = token(&bytes)?;
    if magic != "Pf" {
        return Err(err(&format!("expected grayscale PFM magic 'Pf', got '{magic}'")));
    }
    let width: u32 = token(&bytes)?.parse().map_err(|_| err("bad width"))?;
    let height: u32 = token(&bytes)?.parse().map_err(|_| err("bad height"))?;
    let scale: f64 = token(&bytes)?.parse().map_err(|_| err("bad scale"))?;
    if width == 0 || height == 0 {
        return Err(err("zero image dimensions"));
    }

    let n = (width as usize) * (height as usize);
    if bytes.len() < pos + 4 * n {
        return Err(err("truncated PFM raster"));
    }
    let little_endian = scale < 0.0;
    let factor = scale.abs();
    let mut field = ScalarField::zeros(width, height);
    let mut off = pos;
    for y in (0..height).rev() {
        for x in 0..width {
            let raw: [u8; 4] = bytes[off..off + 4].try_into().unwrap();
            let v = if little_endian {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            } as f64;
            field.set(x, y, if v.is_finite() { v * factor } else { 0.0 });
            off += 4;
        }
    }
    Ok(field)
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DepthSidecar {
    scale: f64,
}

/// Writes depth as a 16-bit grayscale PNG normalized by the maximum value,
/// with the scale recorded in a JSON sidecar next to the image.
pub fn save_depth_png16(path: &Path, depth: &ScalarField) -> Result<()> {
    let max = depth.as_slice().iter().cloned().fold(0.0f64, f64::max);
    let scale = if max > 0.0 { max } else { 1.0 };
    let mut enc = png_writer(path, depth.width(), depth.height())?;
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Sixteen);
    let mut bytes = Vec::with_capacity(depth.as_slice().len() * 2);
    for &v in depth.as_slice() {
        let q = ((v / scale).clamp(0.0, 1.0) * 65535.0).round() as u16;
        bytes.extend_from_slice(&q.to_be_bytes());
    }
    enc.write_header()?.write_image_data(&bytes)?;
    fs::write(sidecar_path(path), format!("{{\"scale\": {}}}\n", fmt_float(scale)?))?;
    Ok(())
}

fn load_depth_png16(path: &Path) -> Result<ScalarField> {
    let sidecar = sidecar_path(path);
    let text = fs::read_to_string(&sidecar).map_err(|e| {
        Error::contract(format!(
            "PNG depth map {} needs a scale sidecar at {}: {e}",
            path.display(),
            sidecar.display()
        ))
    })?;
    let meta: DepthSidecar = serde_json::from_str(&text)?;
    let (w, h, data) = read_gray_png(path)?;
    let data = data
        .into_iter()
        .map(|v| {
            let d = v * meta.scale;
            if d.is_finite() {
                d
            } else {
                0.0
            }
        })
        .collect();
    ScalarField::from_data(w, h, data)
}

/// Loads a depth map from `.pfm` or 16-bit `.png` (+ sidecar); non-finite
/// samples become 0.
pub fn load_depth(path: &Path) -> Result<ScalarField> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pfm") => load_depth_pfm(path),
        Some("png") => load_depth_png16(path),
        _ => Err(Error::contract(format!(
            "unsupported depth format for {} (expected .pfm or .png)",
            path.display()
        ))),
    }
}

// ---------------------------------------------------------------------------
// Normal maps (16-bit RGB PNG, channels mapped from [-1, 1])
// ---------------------------------------------------------------------------

pub fn save_normals_png(path: &Path, normals: &NormalMap) -> Result<()> {
    let mut enc = png_writer(path, normals.width(), normals.height())?;
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Sixteen);
    let mut bytes = Vec::with_capacity(normals.width() as usize * normals.height() as usize * 6);
    for y in 0..normals.height() {
        for x in 0..normals.width() {
            let n = normals.get(x, y);
            for c in 0..3 {
                let q = (((n[c] + 1.0) / 2.0).clamp(0.0, 1.0) * 65535.0).round() as u16;
                bytes.extend_from_slice(&q.to_be_bytes());
            }
        }
    }
    enc.write_header()?.write_image_data(&bytes)?;
    Ok(())
}

pub fn load_normals_png(path: &Path) -> Result<NormalMap> {
    let decoder = png::Decoder::new(fs::File::open(path)?);
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf)?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Sixteen {
        return Err(Error::Png(format!(
            "{}: expected 16-bit RGB normals, got {:?} {:?}",
            path.display(),
            info.color_type,
            info.bit_depth
        )));
    }
    let n = (info.width * info.height) as usize;
    let mut data = Vec::with_capacity(n);
    for px in buf[..6 * n].chunks_exact(6) {
        let ch = |i: usize| {
            u16::from_be_bytes([px[2 * i], px[2 * i + 1]]) as f64 / 65535.0 * 2.0 - 1.0
        };
        data.push(Vector3::new(ch(0), ch(1), ch(2)));
    }
    NormalMap::from_data(info.width, info.height, data)
}

// ---------------------------------------------------------------------------
// Scene directories
// ---------------------------------------------------------------------------

fn view_path(dir: &Path, index: usize) -> PathBuf {
    dir.join("views").join(format!("edge_{index:04}.png"))
}

/// Writes `cameras.json`, `edges_gt.json`, and `views/edge_####.png`. The
/// ground-truth file records `scene.gt` when present, else the working set.
pub fn save_scene_dir(dir: &Path, scene: &Scene, depth: PngBitDepth) -> Result<()> {
    if scene.targets.len() != scene.cameras.len() {
        return Err(Error::contract(format!(
            "scene has {} target images for {} cameras",
            scene.targets.len(),
            scene.cameras.len()
        )));
    }
    fs::create_dir_all(dir.join("views"))?;
    save_cameras(&dir.join("cameras.json"), &scene.cameras)?;
    save_sketches(&dir.join("edges_gt.json"), scene.gt.as_ref().unwrap_or(&scene.set))?;
    for (i, img) in scene.targets.iter().enumerate() {
        save_edge_png(&view_path(dir, i), img, depth)?;
    }
    Ok(())
}

/// Loads a scene directory. The ground-truth sketches double as the initial
/// working set; callers typically replace `set` before optimizing. Every
/// camera must have a matching view image of the right dimensions.
pub fn load_scene_dir(dir: &Path) -> Result<Scene> {
    let cameras = load_cameras(&dir.join("cameras.json"))?;
    let gt = load_sketches(&dir.join("edges_gt.json"))?;
    let mut targets = Vec::with_capacity(cameras.len());
    for (i, cam) in cameras.iter().enumerate() {
        let path = view_path(dir, i);
        let img = load_edge_png(&path)?;
        if img.width() != cam.width || img.height() != cam.height {
            return Err(Error::contract(format!(
                "{}: image is {}x{} but camera {i} expects {}x{}",
                path.display(),
                img.width(),
                img.height(),
                cam.width,
                cam.height
            )));
        }
        targets.push(img);
    }
    Ok(Scene {
        set: gt.clone(),
        cameras,
        targets,
        gt: Some(gt),
        transform: SceneTransform::identity(),
    })
}
