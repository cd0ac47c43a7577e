//! Static SVG tile grids: each tile is one vector shown as a grayscale image,
//! darker meaning more positive, scaled per tile by its largest magnitude.

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;

/// Tile shape for vectors of length `len`: square when possible, else one row.
pub fn tile_shape(len: usize) -> (usize, usize) {
    let side = (len as f64).sqrt().round() as usize;
    if side * side == len {
        (side, side)
    } else {
        (1, len)
    }
}

fn gray(v: f64, scale: f64) -> u8 {
    if scale == 0.0 {
        return 128;
    }
    let t = (v / scale).clamp(-1.0, 1.0);
    // +1 → black, −1 → white, 0 → mid gray.
    (127.5 * (1.0 - t)).round() as u8
}

/// Renders `tiles` (all the same length) in a grid `columns` tiles wide, with
/// a one-pixel white gutter, embedded as a PNG inside an SVG document.
pub fn tile_grid(tiles: &[Vec<f64>], columns: usize, zoom: usize, title: &str) -> String {
    let len = tiles.first().map_or(0, Vec::len);
    let (h, w) = tile_shape(len.max(1));
    let columns = columns.max(1).min(tiles.len().max(1));
    let rows = tiles.len().div_ceil(columns).max(1);
    let (img_w, img_h) = (columns * (w + 1) + 1, rows * (h + 1) + 1);
    let mut pixels = vec![255u8; img_w * img_h];
    for (k, tile) in tiles.iter().enumerate() {
        let scale = tile.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let (ox, oy) = (1 + (k % columns) * (w + 1), 1 + (k / columns) * (h + 1));
        for (i, &v) in tile.iter().enumerate() {
            pixels[(oy + i / w) * img_w + ox + i % w] = gray(v, scale);
        }
    }
    let mut png_bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut png_bytes, img_w as u32, img_h as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().expect("in-memory PNG header");
        writer.write_image_data(&pixels).expect("in-memory PNG data");
    }
    let (sw, sh) = (img_w * zoom, img_h * zoom);
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{sw}\" height=\"{sh}\" viewBox=\"0 0 {sw} {sh}\">\n",
            "<title>{title}</title>\n",
            "<image width=\"{sw}\" height=\"{sh}\" style=\"image-rendering:pixelated\" ",
            "href=\"data:image/png;base64,{data}\"/>\n",
            "</svg>\n"
        ),
        sw = sw,
        sh = sh,
        title = escape(title),
        data = STANDARD.encode(&png_bytes)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_levels() {
        assert_eq!(tile_shape(784), (28, 28));
        assert_eq!(tile_shape(10), (1, 10));
        assert_eq!(gray(1.0, 1.0), 0);
        assert_eq!(gray(-1.0, 1.0), 255);
        assert_eq!(gray(0.0, 0.0), 128);
    }

    #[test]
    fn grid_is_an_svg_document() {
        let svg = tile_grid(&vec![vec![1.0, 0.0, -1.0, 0.5]; 3], 2, 4, "a<b");
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a&lt;b"));
        // 2 tiles across of width 2 plus gutters: 7 px, 4× zoom.
        assert!(svg.contains("width=\"28\""));
    }
}
