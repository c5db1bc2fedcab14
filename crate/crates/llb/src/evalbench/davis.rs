//! DAVIS-style dataset layout: `JPEGImages/<seq>/NNNNN.jpg` frames plus
//! `Annotations/<seq>/NNNNN.png` index masks. Annotations are accepted
//! either as grayscale id maps or as palette RGB using the standard VOC
//! colormap; synthetic exports are written as grayscale ids.

use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};
use llb_core::Tensor;

use crate::datamodel::{Frame, Mask, VideoSequence};
use crate::error::{Error, Result};

/// Standard VOC/DAVIS colormap entry for an object index.
pub fn voc_color(index: usize) -> [u8; 3] {
    let mut c = index;
    let (mut r, mut g, mut b) = (0u8, 0u8, 0u8);
    for j in 0..8 {
        r |= ((c & 1) as u8) << (7 - j);
        g |= (((c >> 1) & 1) as u8) << (7 - j);
        b |= (((c >> 2) & 1) as u8) << (7 - j);
        c >>= 3;
    }
    [r, g, b]
}

fn id_map_from_annotation(img: &DynamicImage, path: &Path) -> Result<Vec<u8>> {
    match img {
        DynamicImage::ImageLuma8(gray) => Ok(gray.pixels().map(|p| p.0[0]).collect()),
        other => {
            let rgb = other.to_rgb8();
            let table: Vec<[u8; 3]> = (0..64).map(voc_color).collect();
            rgb.pixels()
                .map(|p| {
                    table
                        .iter()
                        .position(|c| *c == p.0)
                        .map(|i| i as u8)
                        .ok_or_else(|| {
                            Error::DataLoad(format!(
                                "{}: color {:?} is not in the VOC palette",
                                path.display(),
                                p.0
                            ))
                        })
                })
                .collect()
        }
    }
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<std::path::PathBuf>> {
    let mut files: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some(ext))
        .collect();
    files.sort();
    Ok(files)
}

fn frame_tensor(img: &DynamicImage) -> Tensor {
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let mut data = Vec::with_capacity((w * h * 3) as usize);
    for p in rgb.pixels() {
        data.push(p.0[0] as f64 / 255.0);
        data.push(p.0[1] as f64 / 255.0);
        data.push(p.0[2] as f64 / 255.0);
    }
    Tensor::from_vec(&[h as usize, w as usize, 3], data)
}

/// Load every sequence under `root`. Returns the dataset plus warning
/// records for skipped sequences; an empty directory is an empty dataset.
pub fn load_davis_dir(root: &Path) -> Result<(Vec<VideoSequence>, Vec<String>)> {
    let images_root = root.join("JPEGImages");
    let anno_root = root.join("Annotations");
    let mut sequences = Vec::new();
    let mut warnings = Vec::new();
    if !images_root.exists() {
        return Ok((sequences, warnings));
    }
    let mut seq_dirs: Vec<_> = std::fs::read_dir(&images_root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    seq_dirs.sort();

    for seq_dir in seq_dirs {
        let name = seq_dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("unnamed")
            .to_string();
        let frame_files = sorted_files(&seq_dir, "jpg")?;
        if frame_files.is_empty() {
            warnings.push(format!("{name}: no frames, skipped"));
            continue;
        }
        let anno_dir = anno_root.join(&name);

        let mut frames = Vec::with_capacity(frame_files.len());
        let mut id_maps: Vec<Option<Vec<u8>>> = Vec::with_capacity(frame_files.len());
        for (t, f) in frame_files.iter().enumerate() {
            let img = image::open(f).map_err(|e| {
                Error::DataLoad(format!("{}: {e}", f.display()))
            })?;
            let tensor = frame_tensor(&img);
            frames.push(Frame::new(tensor, t)?);
            let anno_path = anno_dir.join(
                Path::new(f.file_name().unwrap()).with_extension("png"),
            );
            if anno_path.exists() {
                let anno = image::open(&anno_path)
                    .map_err(|e| Error::DataLoad(format!("{}: {e}", anno_path.display())))?;
                if (anno.width() as usize, anno.height() as usize)
                    != (frames[t].width(), frames[t].height())
                {
                    return Err(Error::DataLoad(format!(
                        "{name}: annotation {t} size differs from frame"
                    )));
                }
                id_maps.push(Some(id_map_from_annotation(&anno, &anno_path)?));
            } else {
                id_maps.push(None);
            }
        }

        let Some(first_ids) = &id_maps[0] else {
            return Err(Error::DataLoad(format!(
                "{name}: frame 0 has no annotation"
            )));
        };
        let mut object_ids: Vec<u8> = first_ids.iter().copied().filter(|&v| v != 0).collect();
        object_ids.sort_unstable();
        object_ids.dedup();
        if object_ids.is_empty() {
            warnings.push(format!("{name}: frame 0 annotation is background only, skipped"));
            continue;
        }

        let (h, w) = (frames[0].height(), frames[0].width());
        let masks: Vec<Vec<Option<Mask>>> = object_ids
            .iter()
            .map(|&oid| {
                id_maps
                    .iter()
                    .map(|ids| {
                        ids.as_ref().map(|ids| {
                            let vals = Tensor::from_fn(&[h, w], |p| {
                                if ids[p] == oid {
                                    1.0
                                } else {
                                    0.0
                                }
                            });
                            Mask::new(vals, oid as u32, true).expect("binary by construction")
                        })
                    })
                    .collect()
            })
            .collect();

        sequences.push(VideoSequence { name, frames, masks });
    }
    Ok((sequences, warnings))
}

/// Write a sequence in the DAVIS layout (JPEG frames, grayscale id masks).
pub fn export_davis(seq: &VideoSequence, root: &Path) -> Result<()> {
    let img_dir = root.join("JPEGImages").join(&seq.name);
    let anno_dir = root.join("Annotations").join(&seq.name);
    std::fs::create_dir_all(&img_dir)?;
    std::fs::create_dir_all(&anno_dir)?;
    for (t, frame) in seq.frames.iter().enumerate() {
        let (h, w) = (frame.height(), frame.width());
        let mut rgb = RgbImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                let px = [
                    (frame.pixels.at3(y, x, 0) * 255.0).round() as u8,
                    (frame.pixels.at3(y, x, 1) * 255.0).round() as u8,
                    (frame.pixels.at3(y, x, 2) * 255.0).round() as u8,
                ];
                rgb.put_pixel(x as u32, y as u32, image::Rgb(px));
            }
        }
        let path = img_dir.join(format!("{t:05}.jpg"));
        let file = std::fs::File::create(&path)?;
        let mut writer = std::io::BufWriter::new(file);
        let enc = image::codecs::jpeg::JpegEncoder::new_with_quality(&mut writer, 95);
        rgb.write_with_encoder(enc)
            .map_err(|e| Error::DataLoad(format!("jpeg encode: {e}")))?;

        let annotated = seq.masks.iter().any(|track| track[t].is_some());
        if annotated {
            let mut ids = GrayImage::new(w as u32, h as u32);
            for track in &seq.masks {
                if let Some(mask) = &track[t] {
                    for p in 0..h * w {
                        if mask.values.at(p) == 1.0 {
                            ids.put_pixel(
                                (p % w) as u32,
                                (p / w) as u32,
                                image::Luma([mask.object_id as u8]),
                            );
                        }
                    }
                }
            }
            ids.save(anno_dir.join(format!("{t:05}.png")))
                .map_err(|e| Error::DataLoad(format!("png encode: {e}")))?;
        }
    }
    Ok(())
}

/// Write predicted masks as grayscale id PNGs (one combined map per frame).
pub fn write_mask_pngs(
    masks: &[Vec<Mask>],
    image_size: (usize, usize),
    out_dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let (h, w) = image_size;
    for (t, frame_masks) in masks.iter().enumerate() {
        let mut ids = GrayImage::new(w as u32, h as u32);
        for mask in frame_masks {
            for p in 0..h * w {
                if mask.values.at(p) >= 0.5 {
                    ids.put_pixel(
                        (p % w) as u32,
                        (p / w) as u32,
                        image::Luma([mask.object_id as u8]),
                    );
                }
            }
        }
        ids.save(out_dir.join(format!("{t:05}.png")))
            .map_err(|e| Error::DataLoad(format!("png encode: {e}")))?;
    }
    Ok(())
}

/// Blend per-object mask colors over the frames for quick visual checks.
pub fn write_overlays(
    frames: &[Frame],
    masks: &[Vec<Mask>],
    out_dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    for (t, frame) in frames.iter().enumerate() {
        let (h, w) = (frame.height(), frame.width());
        let mut rgb = RgbImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let mut px = [
                    frame.pixels.at3(y, x, 0),
                    frame.pixels.at3(y, x, 1),
                    frame.pixels.at3(y, x, 2),
                ];
                if let Some(frame_masks) = masks.get(t) {
                    for mask in frame_masks {
                        if mask.values.at(p) >= 0.5 {
                            let c = voc_color(mask.object_id as usize);
                            for k in 0..3 {
                                px[k] = 0.5 * px[k] + 0.5 * (c[k] as f64 / 255.0);
                            }
                        }
                    }
                }
                rgb.put_pixel(
                    x as u32,
                    y as u32,
                    image::Rgb([
                        (px[0] * 255.0).round() as u8,
                        (px[1] * 255.0).round() as u8,
                        (px[2] * 255.0).round() as u8,
                    ]),
                );
            }
        }
        rgb.save(out_dir.join(format!("{t:05}.png")))
            .map_err(|e| Error::DataLoad(format!("png encode: {e}")))?;
    }
    Ok(())
}
