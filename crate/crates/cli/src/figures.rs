//! PNG panels: images side by side with one shared scalar colorbar.

use std::path::Path;

use anyhow::{bail, Context, Result};
use image::{Rgb, RgbImage};
use ndarray::Array2;

const MARGIN: u32 = 6;
const GAP: u32 = 4;
const BAR_WIDTH: u32 = 12;
const GLYPH_SCALE: u32 = 2;
const BACKGROUND: Rgb<u8> = Rgb([24, 24, 24]);
const INK: Rgb<u8> = Rgb([235, 235, 235]);

/// Sequential control points from dark purple through orange to pale yellow.
const INFERNO: [[f32; 3]; 5] = [
    [0.0, 0.0, 4.0],
    [87.0, 16.0, 110.0],
    [188.0, 55.0, 84.0],
    [249.0, 142.0, 9.0],
    [252.0, 255.0, 164.0],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Colormap {
    /// Anatomy.
    Gray,
    /// Errors and uncertainty.
    Inferno,
}

impl Colormap {
    /// Color of `t` in `[0, 1]`; values outside are clamped.
    pub fn color(self, t: f32) -> Rgb<u8> {
        let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
        match self {
            Colormap::Gray => {
                let v = (t * 255.0).round() as u8;
                Rgb([v, v, v])
            }
            Colormap::Inferno => {
                let x = t * (INFERNO.len() - 1) as f32;
                let i = (x.floor() as usize).min(INFERNO.len() - 2);
                let f = x - i as f32;
                let c = |k: usize| (INFERNO[i][k] + f * (INFERNO[i + 1][k] - INFERNO[i][k])).round() as u8;
                Rgb([c(0), c(1), c(2)])
            }
        }
    }
}

/// A row of equally sized images sharing one value range and colormap.
#[derive(Debug, Clone)]
pub struct Figure {
    pub panels: Vec<Array2<f32>>,
    pub range: (f32, f32),
    pub colormap: Colormap,
}

impl Figure {
    /// Range `[0, max]` over all panels, for error and uncertainty maps.
    pub fn nonnegative(panels: Vec<Array2<f32>>, colormap: Colormap) -> Self {
        let max = panels.iter().flat_map(|p| p.iter().copied()).fold(0.0f32, f32::max);
        let hi = if max > 0.0 { max } else { 1.0 };
        Figure { panels, range: (0.0, hi), colormap }
    }

    pub fn render(&self) -> Result<RgbImage> {
        let Some(first) = self.panels.first() else { bail!("figure has no panels") };
        let (h, w) = first.dim();
        if self.panels.iter().any(|p| p.dim() != (h, w)) {
            bail!("figure panels differ in size");
        }
        let (lo, hi) = self.range;
        if !(hi > lo) {
            bail!("empty colorbar range {lo}..{hi}");
        }
        let zoom = (256 / h.max(w)).max(1) as u32;
        let (ph, pw) = (h as u32 * zoom, w as u32 * zoom);
        let n = self.panels.len() as u32;
        let label_w = 6 * 4 * GLYPH_SCALE;
        let width = 2 * MARGIN + n * pw + n * GAP + BAR_WIDTH + GAP + label_w;
        let height = 2 * MARGIN + ph;
        let mut img = RgbImage::from_pixel(width, height, BACKGROUND);
        let norm = |v: f32| (v - lo) / (hi - lo);
        for (k, panel) in self.panels.iter().enumerate() {
            let x0 = MARGIN + k as u32 * (pw + GAP);
            for y in 0..ph {
                for x in 0..pw {
                    let v = panel[[(y / zoom) as usize, (x / zoom) as usize]];
                    img.put_pixel(x0 + x, MARGIN + y, self.colormap.color(norm(v)));
                }
            }
        }
        let bar_x = MARGIN + n * (pw + GAP);
        for y in 0..ph {
            let c = self.colormap.color(1.0 - y as f32 / (ph - 1).max(1) as f32);
            for x in 0..BAR_WIDTH {
                img.put_pixel(bar_x + x, MARGIN + y, c);
            }
        }
        let text_x = bar_x + BAR_WIDTH + GAP;
        draw_text(&mut img, text_x, MARGIN, &format_label(hi));
        draw_text(&mut img, text_x, MARGIN + ph - 5 * GLYPH_SCALE, &format_label(lo));
        Ok(img)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.render()?.save(path).with_context(|| format!("writing {}", path.display()))
    }
}

fn format_label(v: f32) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else if v.abs() >= 0.01 || v == 0.0 {
        format!("{v:.3}")
    } else {
        format!("{v:.1e}")
    }
}

/// 3x5 bitmaps, one row per byte, high bit on the left.
fn glyph(c: char) -> Option<[u8; 5]> {
    Some(match c {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        '-' => [0b000, 0b000, 0b111, 0b000, 0b000],
        'e' => [0b000, 0b111, 0b111, 0b100, 0b111],
        _ => return None,
    })
}

fn draw_text(img: &mut RgbImage, x0: u32, y0: u32, text: &str) {
    let mut x = x0;
    for c in text.chars() {
        if let Some(rows) = glyph(c) {
            for (r, bits) in rows.iter().enumerate() {
                for col in 0..3u32 {
                    if bits & (0b100 >> col) != 0 {
                        for dy in 0..GLYPH_SCALE {
                            for dx in 0..GLYPH_SCALE {
                                let (px, py) = (x + col * GLYPH_SCALE + dx, y0 + r as u32 * GLYPH_SCALE + dy);
                                if px < img.width() && py < img.height() {
                                    img.put_pixel(px, py, INK);
                                }
                            }
                        }
                    }
                }
            }
        }
        x += 4 * GLYPH_SCALE;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colormap_endpoints() {
        assert_eq!(Colormap::Gray.color(0.0), Rgb([0, 0, 0]));
        assert_eq!(Colormap::Gray.color(1.0), Rgb([255, 255, 255]));
        assert_eq!(Colormap::Inferno.color(0.0), Rgb([0, 0, 4]));
        assert_eq!(Colormap::Inferno.color(1.0), Rgb([252, 255, 164]));
        assert_eq!(Colormap::Inferno.color(2.0), Colormap::Inferno.color(1.0));
    }

    #[test]
    fn inferno_luminance_increases() {
        let lum = |c: Rgb<u8>| 0.299 * c[0] as f32 + 0.587 * c[1] as f32 + 0.114 * c[2] as f32;
        let l: Vec<f32> = (0..=20).map(|i| lum(Colormap::Inferno.color(i as f32 / 20.0))).collect();
        assert!(l.windows(2).all(|p| p[1] > p[0]), "{l:?}");
    }

    #[test]
    fn render_places_panels_and_bar() {
        let a = Array2::from_elem((8, 8), 0.0f32);
        let b = Array2::from_elem((8, 8), 1.0f32);
        let fig = Figure { panels: vec![a, b], range: (0.0, 1.0), colormap: Colormap::Gray };
        let img = fig.render().unwrap();
        // 8 px zoomed to 256.
        assert_eq!(img.height(), 256 + 2 * MARGIN);
        assert_eq!(*img.get_pixel(MARGIN + 10, MARGIN + 10), Rgb([0, 0, 0]));
        assert_eq!(*img.get_pixel(MARGIN + 256 + GAP + 10, MARGIN + 10), Rgb([255, 255, 255]));
        let bar_x = MARGIN + 2 * (256 + GAP);
        assert_eq!(*img.get_pixel(bar_x + 1, MARGIN), Rgb([255, 255, 255]));
        assert_eq!(*img.get_pixel(bar_x + 1, MARGIN + 255), Rgb([0, 0, 0]));
    }

    #[test]
    fn mismatched_or_empty_figures_fail() {
        let fig = Figure { panels: vec![], range: (0.0, 1.0), colormap: Colormap::Gray };
        assert!(fig.render().is_err());
        let fig = Figure {
            panels: vec![Array2::zeros((8, 8)), Array2::zeros((16, 8))],
            range: (0.0, 1.0),
            colormap: Colormap::Gray,
        };
        assert!(fig.render().is_err());
        let fig = Figure::nonnegative(vec![Array2::zeros((8, 8))], Colormap::Inferno);
        assert_eq!(fig.range, (0.0, 1.0));
    }

    #[test]
    fn labels_are_drawable() {
        for v in [0.0f32, 1.0, 0.125, 0.0004, 250.0, -0.5] {
            let s = format_label(v);
            assert!(s.chars().all(|c| glyph(c).is_some()), "{s}");
        }
    }
}
