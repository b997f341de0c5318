//! Synthetic small-object scenes: value-noise backgrounds with a handful
//! of bright or dark squares, disks, and bars, none larger than 10 px on a
//! 64 px canvas, so objects stay under 3% of the image area. Images are
//! binary PPM (P6); annotations are one JSON record per line. Generation
//! is deterministic per (spec, seed) and parallelizes per image with
//! derived seeds.

use std::fs;
use std::io::{self, BufRead, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ffpf_core::detect::{iou, BBox, GtBox};
use ffpf_core::rng::Rng;
use ffpf_core::train::Dataset;
use serde::Deserialize;

use crate::threads::run_indexed;

pub const CLASS_NAMES: [&str; 3] = ["square", "disk", "bar"];

#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub size: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_side: usize,
    pub max_side: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            size: 64,
            min_objects: 1,
            max_objects: 6,
            min_side: 4,
            max_side: 10,
        }
    }
}

/// One rendered scene: RGB pixels in [0,1] (CHW) plus its boxes.
pub struct Scene {
    pub pixels: Vec<f32>,
    pub boxes: Vec<GtBox>,
}

fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}

/// Bilinear value noise on a coarse lattice.
fn value_noise(rng: &mut Rng, size: usize, cell: usize, amplitude: f32) -> Vec<f32> {
    let knots = size / cell + 2;
    let lattice: Vec<f32> = (0..knots * knots)
        .map(|_| rng.range(-1.0, 1.0) as f32 * amplitude)
        .collect();
    let mut out = vec![0.0f32; size * size];
    for y in 0..size {
        let fy = y as f32 / cell as f32;
        let (y0, ty) = (fy as usize, fy.fract());
        for x in 0..size {
            let fx = x as f32 / cell as f32;
            let (x0, tx) = (fx as usize, fx.fract());
            let v00 = lattice[y0 * knots + x0];
            let v01 = lattice[y0 * knots + x0 + 1];
            let v10 = lattice[(y0 + 1) * knots + x0];
            let v11 = lattice[(y0 + 1) * knots + x0 + 1];
            out[y * size + x] = lerp(lerp(v00, v01, tx), lerp(v10, v11, tx), ty);
        }
    }
    out
}

/// Deterministic scene for (spec, seed, index).
pub fn render_scene(spec: &SceneSpec, seed: u64, index: u64) -> Scene {
    let mut rng = Rng::derive(seed, index);
    let s = spec.size;

    // background: base gray + coarse noise + per-image brightness jitter,
    // slightly tinted per channel
    let base = rng.range(0.25, 0.5) as f32;
    let jitter = rng.range(-0.05, 0.05) as f32;
    let noise = value_noise(&mut rng, s, 8, 0.08);
    let tint: [f32; 3] = [
        rng.range(-0.02, 0.02) as f32,
        rng.range(-0.02, 0.02) as f32,
        rng.range(-0.02, 0.02) as f32,
    ];
    let mut pixels = vec![0.0f32; 3 * s * s];
    for c in 0..3 {
        for i in 0..s * s {
            pixels[c * s * s + i] = (base + jitter + noise[i] + tint[c]).clamp(0.0, 1.0);
        }
    }

    // objects: fully inside the image, min side respected by construction;
    // crowding is avoided with rejection sampling but the object count is
    // kept exact
    let count = spec.min_objects + rng.below(spec.max_objects - spec.min_objects + 1);
    let mut boxes: Vec<GtBox> = Vec::with_capacity(count);
    for _ in 0..count {
        let class_id = rng.below(3);
        let (w, h) = match class_id {
            0 | 1 => {
                let side = spec.min_side + rng.below(spec.max_side - spec.min_side + 1);
                (side, side)
            }
            _ => {
                // bar: clearly elongated, both sides within range
                let long = (spec.min_side + 2)
                    + rng.below(spec.max_side - spec.min_side - 1);
                let thick = spec.min_side + rng.below(long - 1 - spec.min_side);
                if rng.below(2) == 0 {
                    (long, thick)
                } else {
                    (thick, long)
                }
            }
        };
        let mut placed = None;
        for _try in 0..30 {
            let x1 = rng.below(s - w + 1);
            let y1 = rng.below(s - h + 1);
            let candidate = BBox {
                x1: x1 as f64,
                y1: y1 as f64,
                x2: (x1 + w) as f64,
                y2: (y1 + h) as f64,
            };
            if boxes.iter().all(|b| iou(&b.bbox, &candidate) < 0.25) {
                placed = Some(candidate);
                break;
            }
            if placed.is_none() {
                placed = Some(candidate); // crowded fallback, kept to hold the count
            }
        }
        let bbox = placed.expect("at least one placement attempt");
        boxes.push(GtBox { bbox, class_id });

        // color: strong contrast against the mid-gray background
        let bright = rng.below(2) == 0;
        let lum = if bright {
            rng.range(0.78, 1.0) as f32
        } else {
            rng.range(0.0, 0.12) as f32
        };
        let color: [f32; 3] = [
            (lum + rng.range(-0.05, 0.05) as f32).clamp(0.0, 1.0),
            (lum + rng.range(-0.05, 0.05) as f32).clamp(0.0, 1.0),
            (lum + rng.range(-0.05, 0.05) as f32).clamp(0.0, 1.0),
        ];
        let (x1, y1) = (bbox.x1 as usize, bbox.y1 as usize);
        match class_id {
            1 => {
                // disk inscribed in the box
                let r = w as f32 / 2.0;
                let (cx, cy) = (bbox.x1 as f32 + r, bbox.y1 as f32 + r);
                for py in y1..y1 + h {
                    for px in x1..x1 + w {
                        let dx = px as f32 + 0.5 - cx;
                        let dy = py as f32 + 0.5 - cy;
                        if dx * dx + dy * dy <= r * r {
                            for c in 0..3 {
                                pixels[c * s * s + py * s + px] = color[c];
                            }
                        }
                    }
                }
            }
            _ => {
                for py in y1..y1 + h {
                    for px in x1..x1 + w {
                        for c in 0..3 {
                            pixels[c * s * s + py * s + px] = color[c];
                        }
                    }
                }
            }
        }
    }
    Scene { pixels, boxes }
}

pub fn write_ppm(path: &Path, pixels: &[f32], size: usize) -> io::Result<()> {
    let mut f = BufWriter::new(fs::File::create(path)?);
    write!(f, "P6\n{size} {size}\n255\n")?;
    let hw = size * size;
    let mut row = Vec::with_capacity(3 * hw);
    for i in 0..hw {
        for c in 0..3 {
            row.push((pixels[c * hw + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    f.write_all(&row)
}

pub fn read_ppm(path: &Path) -> io::Result<(Vec<f32>, usize, usize)> {
    let bytes = fs::read(path)?;
    let err = |m: &str| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {m}", path.display()));
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> io::Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token(&bytes)? != "P6" {
        return Err(err("not a P6 ppm"));
    }
    let w: usize = token(&bytes)?.parse().map_err(|_| err("bad width"))?;
    let h: usize = token(&bytes)?.parse().map_err(|_| err("bad height"))?;
    let maxv: usize = token(&bytes)?.parse().map_err(|_| err("bad maxval"))?;
    if maxv != 255 {
        return Err(err("expected maxval 255"));
    }
    pos += 1; // single whitespace after maxval
    let body = &bytes[pos..];
    if body.len() < 3 * w * h {
        return Err(err("truncated pixel data"));
    }
    let mut pixels = vec![0.0f32; 3 * w * h];
    for i in 0..w * h {
        for c in 0..3 {
            pixels[c * w * h + i] = body[3 * i + c] as f32 / 255.0;
        }
    }
    Ok((pixels, w, h))
}

fn image_name(index: usize) -> String {
    format!("img_{index:05}.ppm")
}

fn annotation_line(name: &str, boxes: &[GtBox]) -> String {
    let items: Vec<String> = boxes
        .iter()
        .map(|b| {
            format!(
                "[{},{},{},{},{}]",
                b.bbox.x1 as i64, b.bbox.y1 as i64, b.bbox.x2 as i64, b.bbox.y2 as i64, b.class_id
            )
        })
        .collect();
    format!("{{\"image\":\"{name}\",\"boxes\":[{}]}}", items.join(","))
}

/// Generate `n` images plus `annotations.jsonl` into `dir`. Byte-identical
/// for identical (spec, seed); image synthesis parallelizes per image.
pub fn generate_dataset(spec: &SceneSpec, n: usize, seed: u64, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let scenes = run_indexed(n, |i| render_scene(spec, seed, i as u64));
    let mut ann = BufWriter::new(fs::File::create(dir.join("annotations.jsonl"))?);
    for (i, scene) in scenes.iter().enumerate() {
        let name = image_name(i);
        write_ppm(&dir.join(&name), &scene.pixels, spec.size)?;
        writeln!(ann, "{}", annotation_line(&name, &scene.boxes))?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct Record {
    image: String,
    boxes: Vec<[f64; 5]>,
}

/// Load a generated dataset directory into memory.
pub fn load_dataset(dir: &Path) -> io::Result<Dataset> {
    let ann_path = dir.join("annotations.jsonl");
    let file = fs::File::open(&ann_path)?;
    let mut images = Vec::new();
    let mut boxes = Vec::new();
    let mut size = 0usize;
    for line in io::BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        let (pixels, w, h) = read_ppm(&dir.join(&rec.image))?;
        if w != h {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("{}: non-square image {w}x{h}", rec.image),
            ));
        }
        if size == 0 {
            size = w;
        } else if size != w {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("{}: size {w} differs from dataset size {size}", rec.image),
            ));
        }
        let mut gt = Vec::with_capacity(rec.boxes.len());
        for b in rec.boxes {
            if b[2] <= b[0] || b[3] <= b[1] {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("{}: degenerate box {b:?}", rec.image),
                ));
            }
            gt.push(GtBox {
                bbox: BBox {
                    x1: b[0],
                    y1: b[1],
                    x2: b[2],
                    y2: b[3],
                },
                class_id: b[4] as usize,
            });
        }
        images.push(pixels);
        boxes.push(gt);
    }
    Ok(Dataset {
        images,
        boxes,
        size,
        channels: 3,
    })
}

/// A dataset root either holds a single split or `train/` + `test/`.
pub fn resolve_splits(dir: &Path) -> (PathBuf, Option<PathBuf>) {
    let train = dir.join("train");
    let test = dir.join("test");
    if train.is_dir() && test.is_dir() {
        (train, Some(test))
    } else {
        (dir.to_path_buf(), None)
    }
}

/// Read all bytes of a file (helper for byte-identity tests).
pub fn file_bytes(path: &Path) -> io::Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_byte_identical() {
        let spec = SceneSpec::default();
        let d1 = std::env::temp_dir().join("ffpf_gen_a");
        let d2 = std::env::temp_dir().join("ffpf_gen_b");
        let _ = fs::remove_dir_all(&d1);
        let _ = fs::remove_dir_all(&d2);
        generate_dataset(&spec, 5, 42, &d1).unwrap();
        generate_dataset(&spec, 5, 42, &d2).unwrap();
        for name in ["img_00000.ppm", "img_00004.ppm", "annotations.jsonl"] {
            assert_eq!(
                file_bytes(&d1.join(name)).unwrap(),
                file_bytes(&d2.join(name)).unwrap(),
                "{name}"
            );
        }
        let _ = fs::remove_dir_all(&d1);
        let _ = fs::remove_dir_all(&d2);
    }

    #[test]
    fn single_object_range_yields_one_box_per_record() {
        let spec = SceneSpec {
            min_objects: 1,
            max_objects: 1,
            ..SceneSpec::default()
        };
        for i in 0..50 {
            let scene = render_scene(&spec, 7, i);
            assert_eq!(scene.boxes.len(), 1);
        }
    }

    #[test]
    fn all_boxes_inside_image_over_many_scenes() {
        let spec = SceneSpec::default();
        for i in 0..10_000u64 {
            let scene = render_scene(&spec, 3, i);
            for b in &scene.boxes {
                assert!(b.bbox.x1 >= 0.0 && b.bbox.y1 >= 0.0);
                assert!(b.bbox.x2 <= spec.size as f64 && b.bbox.y2 <= spec.size as f64);
                assert!(b.bbox.x2 - b.bbox.x1 >= spec.min_side as f64);
                assert!(b.bbox.y2 - b.bbox.y1 >= spec.min_side as f64);
            }
        }
    }

    #[test]
    fn ppm_round_trip() {
        let spec = SceneSpec::default();
        let scene = render_scene(&spec, 9, 0);
        let path = std::env::temp_dir().join("ffpf_roundtrip.ppm");
        write_ppm(&path, &scene.pixels, spec.size).unwrap();
        let (pixels, w, h) = read_ppm(&path).unwrap();
        assert_eq!((w, h), (spec.size, spec.size));
        // quantization to u8 is the only loss
        for (a, b) in scene.pixels.iter().zip(&pixels) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
        let _ = fs::remove_file(&path);
    }

    #[test]
    fn dataset_loads_back() {
        let spec = SceneSpec::default();
        let dir = std::env::temp_dir().join("ffpf_load");
        let _ = fs::remove_dir_all(&dir);
        generate_dataset(&spec, 4, 11, &dir).unwrap();
        let ds = load_dataset(&dir).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.size, 64);
        assert!(ds.boxes.iter().all(|b| !b.is_empty()));
        let _ = fs::remove_dir_all(&dir);
    }
}
