//! Static raster plots: density/image heatmaps and trajectory polylines.

use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::{Array2, Array3};
use sparkling2d_core::error::{Error, Result};

fn save(img: RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| Error::Format(format!("cannot write {}: {e}", path.display())))
}

/// Grayscale heatmap with optional gamma compression (densities are very
/// peaked, so a fourth-root map keeps the tails visible).
pub fn heatmap(values: &Array2<f64>, gamma: f64, out: &Path) -> Result<()> {
    let (rows, cols) = values.dim();
    let max = values.iter().cloned().fold(0.0_f64, f64::max);
    let scale_to = 512usize;
    let factor = (scale_to / rows.max(cols)).max(1);
    let mut img = RgbImage::new((cols * factor) as u32, (rows * factor) as u32);
    for (y, x, px) in img.enumerate_pixels_mut() {
        let r = y as usize / factor;
        let c = x as usize / factor;
        let v = if max > 0.0 { (values[[r, c]] / max).powf(gamma) } else { 0.0 };
        let g = (v.clamp(0.0, 1.0) * 255.0) as u8;
        *px = Rgb([g, g, g]);
    }
    save(img, out)
}

/// All shots as polylines over [-1,1]²; shot 0 highlighted in red.
pub fn trajectory(points: &Array3<f64>, out: &Path) -> Result<()> {
    let side = 800u32;
    let mut img = RgbImage::from_pixel(side, side, Rgb([255, 255, 255]));
    let to_px = |v: f64| ((v + 1.0) / 2.0 * (side - 1) as f64).round() as i64;
    let (nc, ns, _) = points.dim();
    // draw the highlighted shot last so it stays on top
    for shot in (0..nc).rev() {
        let color = if shot == 0 { Rgb([200, 30, 30]) } else { Rgb([90, 90, 110]) };
        for m in 0..ns - 1 {
            let x0 = to_px(points[[shot, m, 0]]);
            let y0 = to_px(-points[[shot, m, 1]]);
            let x1 = to_px(points[[shot, m + 1, 0]]);
            let y1 = to_px(-points[[shot, m + 1, 1]]);
            draw_line(&mut img, x0, y0, x1, y1, color);
        }
    }
    save(img, out)
}

fn draw_line(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb<u8>) {
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let (mut x, mut y) = (x0, y0);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}
