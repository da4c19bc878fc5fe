use spheredet_core::geom::box_outline;
use spheredet_core::raster::Raster;
use spheredet_core::{ErpGeometry, LatLon, SphericalBox};

fn plot(r: &mut Raster, row: i64, col: i64, color: &[f32]) {
    if row < 0 || row >= r.height as i64 {
        return;
    }
    let col = col.rem_euclid(r.width as i64) as usize;
    let px = r.pixel_mut(row as usize, col);
    let n = px.len().min(color.len());
    px[..n].copy_from_slice(&color[..n]);
    if px.len() == 4 {
        px[3] = 1.0;
    }
}

/// Joins two samples with a pixel line, taking the short way across the
/// seam.
fn segment(r: &mut Raster, g: &ErpGeometry, a: LatLon, b: LatLon, color: &[f32]) {
    let (ra, ca) = g.pixel_position(a);
    let (rb, mut cb) = g.pixel_position(b);
    let w = g.width as f64;
    if cb - ca > w / 2.0 {
        cb -= w;
    } else if ca - cb > w / 2.0 {
        cb += w;
    }
    let steps = (rb - ra).abs().max((cb - ca).abs()).ceil().max(1.0) as usize;
    for k in 0..=steps {
        let t = k as f64 / steps as f64;
        let row = (ra + (rb - ra) * t).round() as i64;
        let col = (ca + (cb - ca) * t).round() as i64;
        plot(r, row, col, color);
    }
}

/// Draws each box's region boundary, sampled every degree in its own frame.
pub fn draw_outlines(r: &mut Raster, boxes: &[SphericalBox], color: &[f32]) {
    let g = ErpGeometry {
        height: r.height,
        width: r.width,
    };
    for bx in boxes {
        for edge in box_outline(bx, 1.0) {
            for pair in edge.windows(2) {
                segment(r, &g, pair[0], pair[1], color);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equator_box_outline_hits_expected_pixels() {
        let mut r = Raster::new(180, 360, 3);
        let bx = SphericalBox::new(0.0, 0.0, 40.0, 20.0).unwrap();
        draw_outlines(&mut r, &[bx], &[1.0, 0.0, 0.0]);
        // left edge runs along longitude -20 at the equator
        let g = ErpGeometry {
            height: 180,
            width: 360,
        };
        let (row, col) = g.pixel_position(LatLon::new(0.0, -20.0));
        assert_eq!(r.pixel(row.round() as usize, col.round() as usize)[0], 1.0);
        // center untouched
        assert_eq!(r.pixel(90, 180)[0], 0.0);
    }

    #[test]
    fn seam_crossing_does_not_streak() {
        let mut r = Raster::new(90, 180, 1);
        let bx = SphericalBox::new(0.0, 180.0, 20.0, 20.0).unwrap();
        draw_outlines(&mut r, &[bx], &[1.0]);
        // the middle of the panorama stays empty
        for row in 0..90 {
            assert_eq!(r.pixel(row, 90)[0], 0.0);
        }
    }
}
