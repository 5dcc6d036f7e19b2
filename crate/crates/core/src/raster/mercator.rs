use std::f64::consts::PI;

/// Latitude limit of the square Web-Mercator world.
pub const MAX_MERCATOR_LAT: f64 = 85.0511;

/// Projects to world pixel coordinates of a `256 * 2^zoom` pixel world.
/// Latitudes beyond the Mercator limit are clamped with a warning.
pub fn mercator_project(lat: f64, lon: f64, zoom: u8) -> (f64, f64) {
    let lat = if lat.abs() > MAX_MERCATOR_LAT {
        log::warn!("latitude {lat} clamped to the Web-Mercator limit");
        lat.clamp(-MAX_MERCATOR_LAT, MAX_MERCATOR_LAT)
    } else {
        lat
    };
    let world = 256.0 * 2f64.powi(zoom as i32);
    let phi = lat.to_radians();
    let x = (lon + 180.0) / 360.0 * world;
    let y = (1.0 - (phi.tan() + 1.0 / phi.cos()).ln() / PI) / 2.0 * world;
    (x, y)
}

pub fn mercator_unproject(x: f64, y: f64, zoom: u8) -> (f64, f64) {
    let world = 256.0 * 2f64.powi(zoom as i32);
    let lon = x / world * 360.0 - 180.0;
    let n = PI * (1.0 - 2.0 * y / world);
    let lat = n.sinh().atan().to_degrees();
    (lat, lon)
}
