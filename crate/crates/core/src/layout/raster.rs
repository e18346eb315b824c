//! Deterministic rasterization of normalized layouts and graymap I/O.

use std::io::Cursor;

use super::{Layout, LayoutError, Result};
use crate::graph::Graph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RenderParams {
    pub size: usize,
    pub node_radius: usize,
    pub edge_width: usize,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self {
            size: 512,
            node_radius: 4,
            edge_width: 1,
        }
    }
}

/// Square grayscale image with intensities in `[0, 1]`, row-major from the
/// top-left corner.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl RasterImage {
    pub fn new(size: usize) -> Self {
        Self {
            width: size,
            height: size,
            pixels: vec![0.0; size * size],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    fn plot(&mut self, x: i64, y: i64) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.pixels[y as usize * self.width + x as usize] = 1.0;
        }
    }

    fn disc(&mut self, cx: i64, cy: i64, r: i64) {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy <= r * r {
                    self.plot(cx + dx, cy + dy);
                }
            }
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), r: i64) {
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            if r == 0 {
                self.plot(x, y);
            } else {
                self.disc(x, y, r);
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

    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn to_png(&self) -> Vec<u8> {
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.to_bytes())
            .expect("buffer matches dimensions");
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png)
            .expect("in-memory PNG encoding cannot fail");
        out.into_inner()
    }
}

/// Draws edges as one-pixel Bresenham segments (stamped with a disc when
/// `edge_width > 1`), then nodes as filled discs. The layout is expected to
/// be normalized to the unit square; `y` grows upward.
pub fn render(g: &Graph, l: &Layout, params: &RenderParams) -> Result<RasterImage> {
    if params.size < 16 {
        return Err(LayoutError::RasterTooSmall(params.size));
    }
    if l.coords.len() != g.node_count() {
        return Err(LayoutError::Format(format!(
            "layout has {} points for {} nodes",
            l.coords.len(),
            g.node_count()
        )));
    }
    let mut img = RasterImage::new(params.size);
    let margin = (params.node_radius.max(params.edge_width / 2) + 1) as f64;
    let span = (params.size as f64 - 1.0 - 2.0 * margin).max(0.0);
    let px: Vec<(i64, i64)> = l
        .coords
        .iter()
        .map(|p| {
            let x = margin + p[0].clamp(0.0, 1.0) * span;
            let y = margin + (1.0 - p[1].clamp(0.0, 1.0)) * span;
            (x.round() as i64, y.round() as i64)
        })
        .collect();
    let edge_r = (params.edge_width.saturating_sub(1) / 2) as i64;
    for &(u, v) in g.edges() {
        img.line(px[u], px[v], edge_r);
    }
    for &(x, y) in &px {
        img.disc(x, y, params.node_radius as i64);
    }
    Ok(img)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmFormat {
    /// Plain-text `P2`.
    Ascii,
    /// Binary `P5`.
    Binary,
}

pub fn write_pgm(img: &RasterImage, format: PgmFormat) -> Vec<u8> {
    let bytes = img.to_bytes();
    match format {
        PgmFormat::Binary => {
            let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
            out.extend_from_slice(&bytes);
            out
        }
        PgmFormat::Ascii => {
            let mut out = format!("P2\n{} {}\n255\n", img.width, img.height);
            for row in bytes.chunks(img.width) {
                let line: Vec<String> = row.iter().map(|b| b.to_string()).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
            out.into_bytes()
        }
    }
}

/// Reads `P2` or `P5` graymaps with a maxval of at most 255.
pub fn read_pgm(data: &[u8]) -> Result<RasterImage> {
    let bad = |m: &str| LayoutError::Format(format!("pgm: {m}"));
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < data.len() && data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < data.len() && data[pos] == b'#' {
                while pos < data.len() && data[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("unexpected end of header"));
        }
        Ok(String::from_utf8_lossy(&data[start..pos]).into_owned())
    };
    let magic = token()?;
    let num = |s: String| s.parse::<usize>().map_err(|_| bad("bad number"));
    let width = num(token()?)?;
    let height = num(token()?)?;
    let maxval = num(token()?)?;
    if maxval == 0 || maxval > 255 {
        return Err(bad("maxval must be in 1..=255"));
    }
    let scale = maxval as f64;
    let pixels = match magic.as_str() {
        "P5" => {
            let body = &data[pos + 1..];
            if body.len() < width * height {
                return Err(bad("truncated pixel data"));
            }
            body[..width * height].iter().map(|&b| b as f64 / scale).collect()
        }
        "P2" => {
            let mut px = Vec::with_capacity(width * height);
            for _ in 0..width * height {
                px.push(num(token()?)? as f64 / scale);
            }
            px
        }
        other => return Err(bad(&format!("unsupported magic {other:?}"))),
    };
    Ok(RasterImage { width, height, pixels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::Algorithm;

    fn single(x: f64, y: f64) -> (Graph, Layout) {
        let g = Graph::new("one", 1, &[]).unwrap();
        let l = Layout {
            graph_id: "one".into(),
            algorithm: Algorithm::Spring,
            coords: vec![[x, y]],
            converged: true,
        };
        (g, l)
    }

    #[test]
    fn single_node_is_one_disc() {
        for r in [1usize, 3, 4, 7] {
            let (g, l) = single(0.5, 0.5);
            let img = render(&g, &l, &RenderParams { size: 64, node_radius: r, edge_width: 1 }).unwrap();
            let sum: f64 = img.pixels.iter().sum();
            // Brute-force lattice count of the disc.
            let r = r as i64;
            let lattice = (-r..=r)
                .flat_map(|x| (-r..=r).map(move |y| (x, y)))
                .filter(|(x, y)| x * x + y * y <= r * r)
                .count() as f64;
            assert_eq!(sum, lattice);
            let area = std::f64::consts::PI * (r * r) as f64;
            assert!((sum - area).abs() <= 2.0 * std::f64::consts::PI * r as f64 + 1.0);
        }
    }

    #[test]
    fn rejects_small_canvas() {
        let (g, l) = single(0.0, 0.0);
        let err = render(&g, &l, &RenderParams { size: 15, node_radius: 1, edge_width: 1 });
        assert!(matches!(err, Err(LayoutError::RasterTooSmall(15))));
    }

    #[test]
    fn corners_stay_on_canvas_and_render_is_deterministic() {
        let g = Graph::new("sq", 4, &[(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        let l = Layout {
            graph_id: "sq".into(),
            algorithm: Algorithm::Neato,
            coords: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            converged: true,
        };
        let p = RenderParams { size: 32, node_radius: 3, edge_width: 3 };
        let a = render(&g, &l, &p).unwrap();
        let b = render(&g, &l, &p).unwrap();
        assert_eq!(a, b);
        assert!(a.pixels.iter().all(|&v| v == 0.0 || v == 1.0));
        // Nothing clipped: the border rows and columns stay dark.
        for i in 0..32 {
            assert_eq!(a.get(i, 0), 0.0);
            assert_eq!(a.get(0, i), 0.0);
            assert_eq!(a.get(i, 31), 0.0);
            assert_eq!(a.get(31, i), 0.0);
        }
    }

    #[test]
    fn pgm_round_trip() {
        let g = Graph::new("e", 2, &[(0, 1)]).unwrap();
        let l = Layout {
            graph_id: "e".into(),
            algorithm: Algorithm::Fdp,
            coords: vec![[0.0, 0.5], [1.0, 0.5]],
            converged: true,
        };
        let img = render(&g, &l, &RenderParams { size: 20, node_radius: 2, edge_width: 1 }).unwrap();
        for f in [PgmFormat::Ascii, PgmFormat::Binary] {
            assert_eq!(read_pgm(&write_pgm(&img, f)).unwrap(), img);
        }
        let png = img.to_png();
        assert_eq!(&png[1..4], b"PNG");
    }
}
