//! Image-sequence input described by a JSON manifest:
//!
//! ```json
//! { "fps": "30/1", "images": ["frames/0000.png", "frames/0001.ppm"] }
//! ```
//!
//! Relative image paths resolve against the manifest's directory. Any format
//! the `image` crate decodes with the enabled features (PNG, PPM/PGM/PAM) is
//! accepted; every image is converted to 8-bit RGB.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Fps, Frame, FrameError, FrameSource, StreamInfo};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub fps: Fps,
    #[serde(default)]
    pub images: Vec<PathBuf>,
}

pub struct ImageSequence {
    info: StreamInfo,
    paths: Vec<PathBuf>,
    next: usize,
    pending: Option<Frame>,
    failed: bool,
}

fn load(index: u64, path: &Path, fps: Fps) -> Result<Frame, FrameError> {
    let shown = path.display().to_string();
    if !path.exists() {
        return Err(FrameError::Image {
            index,
            path: shown,
            message: "file not found".into(),
        });
    }
    let img = image::open(path)
        .map_err(|e| FrameError::Image {
            index,
            path: shown,
            message: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Frame::new(index, fps, w, h, 3, img.into_raw())
}

pub fn open_image_sequence(manifest_path: impl AsRef<Path>) -> Result<ImageSequence, FrameError> {
    let manifest_path = manifest_path.as_ref();
    let text = std::fs::read_to_string(manifest_path)
        .map_err(|e| FrameError::io(manifest_path.display().to_string(), e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| FrameError::Manifest(e.to_string()))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    ImageSequence::from_manifest(&manifest, base)
}

impl ImageSequence {
    /// The first image is decoded eagerly to establish stream geometry.
    pub fn from_manifest(manifest: &Manifest, base: &Path) -> Result<Self, FrameError> {
        let paths: Vec<PathBuf> = manifest
            .images
            .iter()
            .map(|p| {
                if p.is_absolute() {
                    p.clone()
                } else {
                    base.join(p)
                }
            })
            .collect();
        let pending = match paths.first() {
            Some(first) => Some(load(0, first, manifest.fps)?),
            None => None,
        };
        let (width, height) = pending.as_ref().map_or((0, 0), |f| (f.width(), f.height()));
        Ok(ImageSequence {
            info: StreamInfo {
                width,
                height,
                fps: manifest.fps,
                frame_count: Some(paths.len() as u64),
            },
            paths,
            next: 0,
            pending,
            failed: false,
        })
    }
}

impl Iterator for ImageSequence {
    type Item = Result<Frame, FrameError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.next >= self.paths.len() {
            return None;
        }
        let index = self.next as u64;
        let path = &self.paths[self.next];
        self.next += 1;
        let frame = match self.pending.take() {
            Some(f) => Ok(f),
            None => load(index, path, self.info.fps),
        };
        let checked = frame.and_then(|f| {
            if f.width() != self.info.width || f.height() != self.info.height {
                Err(FrameError::DimensionMismatch {
                    index,
                    path: path.display().to_string(),
                    want_w: self.info.width,
                    want_h: self.info.height,
                    got_w: f.width(),
                    got_h: f.height(),
                })
            } else {
                Ok(f)
            }
        });
        self.failed = checked.is_err();
        Some(checked)
    }
}

impl FrameSource for ImageSequence {
    fn info(&self) -> &StreamInfo {
        &self.info
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::Seconds;

    fn write_png(dir: &Path, name: &str, w: u32, h: u32, value: u8) {
        let img = image::RgbImage::from_pixel(w, h, image::Rgb([value, value, value]));
        img.save(dir.join(name)).unwrap();
    }

    fn write_manifest(dir: &Path, fps: &str, names: &[&str]) -> PathBuf {
        let path = dir.join("manifest.json");
        let body = serde_json::json!({ "fps": fps, "images": names });
        std::fs::write(&path, body.to_string()).unwrap();
        path
    }

    #[test]
    fn three_images_at_one_fps() {
        let dir = tempfile::tempdir().unwrap();
        for (i, n) in ["a.png", "b.png", "c.png"].iter().enumerate() {
            write_png(dir.path(), n, 4, 2, i as u8 * 50);
        }
        let m = write_manifest(dir.path(), "1", &["a.png", "b.png", "c.png"]);
        let seq = open_image_sequence(&m).unwrap();
        assert_eq!(seq.info().frame_count, Some(3));
        let ts: Vec<Seconds> = seq.map(|f| f.unwrap().timestamp()).collect();
        assert_eq!(
            ts,
            vec![
                Seconds::from_integer(0),
                Seconds::from_integer(1),
                Seconds::from_integer(2)
            ]
        );
    }

    #[test]
    fn empty_manifest_is_empty_stream() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_manifest(dir.path(), "30/1", &[]);
        let mut seq = open_image_sequence(&m).unwrap();
        assert_eq!(seq.info().frame_count, Some(0));
        assert!(seq.next().is_none());
    }

    #[test]
    fn ninety_frames_at_thirty_fps() {
        let dir = tempfile::tempdir().unwrap();
        write_png(dir.path(), "f.png", 2, 2, 9);
        let names = vec!["f.png"; 90];
        let m = write_manifest(dir.path(), "30", &names);
        let last = open_image_sequence(&m).unwrap().last().unwrap().unwrap();
        assert_eq!(last.index(), 89);
        assert_eq!(last.timestamp(), Seconds::new(89, 30));
        let secs = *last.timestamp().numer() as f64 / *last.timestamp().denom() as f64;
        assert!((secs - 2.9667).abs() < 1e-4);
    }

    #[test]
    fn missing_image_names_path() {
        let dir = tempfile::tempdir().unwrap();
        write_png(dir.path(), "a.png", 2, 2, 0);
        let m = write_manifest(dir.path(), "1", &["a.png", "gone.png"]);
        let items: Vec<_> = open_image_sequence(&m).unwrap().collect();
        let err = items[1].as_ref().unwrap_err().to_string();
        assert!(err.contains("gone.png"), "{err}");
    }

    #[test]
    fn dimension_mismatch_stops_at_first_offender() {
        let dir = tempfile::tempdir().unwrap();
        write_png(dir.path(), "a.png", 2, 2, 0);
        write_png(dir.path(), "b.png", 3, 2, 0);
        let m = write_manifest(dir.path(), "1", &["a.png", "b.png", "a.png"]);
        let items: Vec<_> = open_image_sequence(&m).unwrap().collect();
        assert_eq!(items.len(), 2);
        assert!(matches!(
            items[1],
            Err(FrameError::DimensionMismatch { index: 1, .. })
        ));
    }

    #[test]
    fn ppm_images_load() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("x.ppm"), b"P6\n1 1\n255\n\x64\x32\xc8").unwrap();
        let m = write_manifest(dir.path(), "1", &["x.ppm"]);
        let f = open_image_sequence(&m).unwrap().next().unwrap().unwrap();
        assert_eq!(f.pixels(), &[100, 50, 200]);
    }
}
