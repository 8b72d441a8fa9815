/// Wrap degrees into `[0, 360)`.
pub fn normalize_azimuth(deg: f64) -> f64 {
    let a = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if a >= 360.0 {
        0.0
    } else {
        a
    }
}

/// Centered pose bins: bin `k` covers `[k*w - w/2, k*w + w/2)` with
/// `w = 360/n_bins`, so bin 0 straddles 0 degrees.
pub fn pose_bin(azimuth: f64, n_bins: usize) -> usize {
    assert!(n_bins > 0, "pose_bin needs at least one bin");
    let width = 360.0 / n_bins as f64;
    let a = normalize_azimuth(azimuth);
    ((a / width + 0.5).floor() as usize) % n_bins
}

/// Center angle of bin `bin`, in degrees.
pub fn bin_center(bin: usize, n_bins: usize) -> f64 {
    bin as f64 * 360.0 / n_bins as f64
}
