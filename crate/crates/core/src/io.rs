//! File formats: PNG panoramas, masks and cubemap faces, raw float saliency
//! maps with a JSON sidecar, and JSON helpers.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Cubemap, EquirectImage, EquirectMask, Face, FaceImage, MaskCubemap};

fn image_err(path: &Path, source: image::ImageError) -> Error {
    match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        source => Error::Image { path: path.to_path_buf(), source },
    }
}

/// Reads an 8- or 16-bit grayscale or RGB PNG. Alpha is dropped.
pub fn load_equirect(path: impl AsRef<Path>) -> Result<EquirectImage> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, data): (usize, Vec<f32>) = match img {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) => {
            (1, img.to_luma8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect())
        }
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) => {
            (1, img.to_luma16().into_raw().into_iter().map(|v| v as f32 / 65535.0).collect())
        }
        DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) => {
            (3, img.to_rgb16().into_raw().into_iter().map(|v| v as f32 / 65535.0).collect())
        }
        other => (3, other.to_rgb8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect()),
    };
    EquirectImage::new(w, h, channels, data).map_err(|e| Error::Format { path: path.to_path_buf(), reason: e.to_string() })
}

/// Reads a mask PNG, thresholding the first channel at 0.5.
pub fn load_mask(path: impl AsRef<Path>) -> Result<EquirectMask> {
    Ok(EquirectMask::threshold(&load_equirect(path)?))
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn save_buffer(path: &Path, width: usize, height: usize, channels: usize, data: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = data.iter().map(|&v| to_u8(v)).collect();
    let result = if channels == 1 {
        GrayImage::from_raw(width as u32, height as u32, bytes).expect("buffer size").save(path)
    } else {
        RgbImage::from_raw(width as u32, height as u32, bytes).expect("buffer size").save(path)
    };
    result.map_err(|e| image_err(path, e))
}

pub fn save_equirect(img: &EquirectImage, path: impl AsRef<Path>) -> Result<()> {
    save_buffer(path.as_ref(), img.width(), img.height(), img.channels(), img.data())
}

/// Writes a mask as 8-bit grayscale with foreground at 255.
pub fn save_mask(mask: &EquirectMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = mask.data().iter().map(|&v| v * 255).collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(mask.width() as u32, mask.height() as u32, bytes).expect("buffer size");
    buf.save(path).map_err(|e| image_err(path, e))
}

pub fn save_face(face: &FaceImage, path: impl AsRef<Path>) -> Result<()> {
    save_buffer(path.as_ref(), face.size, face.size, face.channels, &face.data)
}

/// Horizontal cross: top above front, then left/front/right/back, then bottom.
pub fn cross_layout(cube: &Cubemap) -> (usize, usize, Vec<f32>) {
    let s = cube.face_size;
    let ch = cube.faces[0].channels;
    let (w, h) = (4 * s, 3 * s);
    let mut out = vec![0.0f32; w * h * ch];
    let slots = [
        (Face::Top, 1, 0),
        (Face::Left, 0, 1),
        (Face::Front, 1, 1),
        (Face::Right, 2, 1),
        (Face::Back, 3, 1),
        (Face::Bottom, 1, 2),
    ];
    for (face, cx, cy) in slots {
        let f = cube.face(face);
        for y in 0..s {
            let dst = ((cy * s + y) * w + cx * s) * ch;
            out[dst..dst + s * ch].copy_from_slice(&f.data[y * s * ch..(y + 1) * s * ch]);
        }
    }
    (w, h, out)
}

/// Writes `<stem>_{front,right,back,left,top,bottom}.png` and `<stem>_cross.png`.
pub fn save_cubemap(cube: &Cubemap, dir: impl AsRef<Path>, stem: &str) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::with_capacity(7);
    for face in Face::ALL {
        let path = dir.join(format!("{stem}_{}.png", face.name()));
        save_face(cube.face(face), &path)?;
        written.push(path);
    }
    let (w, h, data) = cross_layout(cube);
    let path = dir.join(format!("{stem}_cross.png"));
    save_buffer(&path, w, h, cube.faces[0].channels, &data)?;
    written.push(path);
    Ok(written)
}

/// Mask cubemap faces as 0/1 float images, for writing with [`save_cubemap`].
pub fn mask_cubemap_as_image(mask: &MaskCubemap) -> Cubemap {
    Cubemap {
        face_size: mask.face_size,
        faces: std::array::from_fn(|i| FaceImage {
            size: mask.face_size,
            channels: 1,
            data: mask.faces[i].data.iter().map(|&v| v as f32).collect(),
        }),
        source_angle: mask.source_angle,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawSidecar {
    width: usize,
    height: usize,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Reads a saliency map: PNG (first channel) or little-endian `f32` raw data
/// with a `<path>.json` sidecar holding `{"width", "height"}`. Raw values
/// outside `[0, 1]` are min-max rescaled.
pub fn load_saliency(path: impl AsRef<Path>) -> Result<EquirectImage> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        let img = load_equirect(path)?;
        if img.channels() == 1 {
            return Ok(img);
        }
        let data = img.data().chunks(3).map(|p| p[0]).collect();
        return EquirectImage::new(img.width(), img.height(), 1, data);
    }
    let side: RawSidecar = read_json(sidecar_path(path))?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != side.width * side.height * 4 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("expected {} bytes for {}x{} f32, got {}", side.width * side.height * 4, side.width, side.height, bytes.len()),
        });
    }
    let mut values: Vec<f32> = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format { path: path.to_path_buf(), reason: "non-finite saliency value".into() });
    }
    let (lo, hi) = values.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if lo < 0.0 || hi > 1.0 {
        let span = if hi > lo { hi - lo } else { 1.0 };
        values.iter_mut().for_each(|v| *v = (*v - lo) / span);
    }
    EquirectImage::new(side.width, side.height, 1, values).map_err(|e| Error::Format { path: path.to_path_buf(), reason: e.to_string() })
}

pub fn save_saliency_raw(values: &[f32], width: usize, height: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    write_json(sidecar_path(path), &RawSidecar { width, height })
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_path_buf(), source })
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes a 16-bit RGB PNG; used for high bit-depth round trips.
pub fn save_equirect_16(img: &EquirectImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let words: Vec<u16> = img.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16).collect();
    let result = if img.channels() == 1 {
        ImageBuffer::<Luma<u16>, Vec<u16>>::from_raw(img.width() as u32, img.height() as u32, words).expect("buffer size").save(path)
    } else {
        ImageBuffer::<Rgb<u16>, Vec<u16>>::from_raw(img.width() as u32, img.height() as u32, words).expect("buffer size").save(path)
    };
    result.map_err(|e| image_err(path, e))
}
