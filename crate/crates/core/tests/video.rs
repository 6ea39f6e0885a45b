use relight_core::imaging::{BinaryMask, ImageTensor, VideoSequence};
use relight_core::sh::{rotate_z, ShLight};
use relight_core::video::{flicker_report, stabilize, tile_light, DvpConfig};
use relight_core::Error;

const RES: usize = 32;

fn mask() -> BinaryMask {
    BinaryMask::from_fn(RES, RES, |r, c| (6..26).contains(&r) && (4..28).contains(&c))
}

fn frame(gain: f32) -> ImageTensor {
    ImageTensor::from_fn(RES, RES, 3, |r, c, ch| {
        gain * (0.2 + 0.5 * ((r + 2 * c + ch) % 9) as f32 / 9.0)
    })
    .masked(&mask())
    .unwrap()
    .with_mask(mask())
    .unwrap()
}

fn video(gains: &[f32]) -> VideoSequence {
    VideoSequence::new(gains.iter().map(|&g| frame(g)).collect(), 30.0).unwrap()
}

fn base_light() -> ShLight {
    let mut coeffs = [[0.0; 9]; 3];
    for (c, row) in coeffs.iter_mut().enumerate() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = if k == 0 { 1.0 } else { 0.3 * ((k + c) as f64).cos() };
        }
    }
    ShLight::new(coeffs).unwrap()
}

#[test]
fn tiled_light_repeats_coefficients() {
    let l = base_light();
    let t = tile_light(&l, 3, 5).unwrap();
    assert_eq!(t.dims(), (3, 5, 27));
    let flat = l.to_vec();
    for r in 0..3 {
        for c in 0..5 {
            for (k, &want) in flat.iter().enumerate() {
                assert_eq!(t.get(r, c, k), want as f32);
            }
        }
    }
    assert!(tile_light(&l, 0, 4).is_err());
}

#[test]
fn flicker_report_identities() {
    let steady = video(&[1.0; 4]);
    let report = flicker_report(&steady, &steady, None).unwrap();
    assert_eq!(report.mean_before, 0.0);
    assert_eq!(report.ratio, 1.0);

    let flicker = video(&[1.0, 0.9, 1.1, 0.95]);
    let same = flicker_report(&flicker, &flicker, None).unwrap();
    assert!((same.ratio - 1.0).abs() < 1e-12);
    assert!((same.correlation - 1.0).abs() < 1e-9);
    let fixed = flicker_report(&flicker, &steady, Some(&flicker)).unwrap();
    assert_eq!(fixed.ratio, 0.0);
    assert_eq!(fixed.correlation, 0.0, "constant series has no correlation");

    let csv = same.to_csv();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 5);
    assert!(rows[1].starts_with("0,,,"));
    let dir = tempfile::tempdir().unwrap();
    same.write(dir.path()).unwrap();
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("flicker.json")).unwrap()).unwrap();
    assert!((json["ratio"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!(flicker_report(&flicker, &video(&[1.0; 3]), None).is_err());
}

fn small_cfg(epochs: usize, conditioning: bool) -> DvpConfig {
    DvpConfig {
        epochs,
        light_conditioning: conditioning,
        ..DvpConfig::default()
    }
}

#[test]
fn stabilize_checks_its_inputs() {
    let v = video(&[1.0, 1.0]);
    let lights = vec![base_light(); 2];
    assert!(matches!(
        stabilize(&v, &v, None, &small_cfg(1, true)),
        Err(Error::InvalidArgument(_))
    ));
    assert!(stabilize(&v, &v, Some(&lights[..1]), &small_cfg(1, true)).is_err());
    assert!(stabilize(&v, &video(&[1.0; 3]), Some(&lights), &small_cfg(1, true)).is_err());
    assert!(stabilize(&v, &v, None, &small_cfg(0, false)).is_err());
    assert!(stabilize(&v, &v, None, &small_cfg(1, false)).is_ok());
    for bad in [
        DvpConfig {
            final_lr: Some(1.0),
            ..small_cfg(1, false)
        },
        DvpConfig {
            final_lr: Some(-1e-6),
            ..small_cfg(1, false)
        },
        DvpConfig {
            grad_clip: Some(0.0),
            ..small_cfg(1, false)
        },
    ] {
        assert!(matches!(stabilize(&v, &v, None, &bad), Err(Error::InvalidArgument(_))));
    }
    let constant = DvpConfig {
        final_lr: None,
        grad_clip: None,
        ..small_cfg(1, false)
    };
    assert!(stabilize(&v, &v, None, &constant).is_ok());
}

#[test]
fn light_conditioning_separates_identical_frames() {
    let v = video(&[1.0, 1.0]);
    let relit = video(&[0.7, 1.2]);
    let l0 = base_light();
    let lights = vec![l0.clone(), rotate_z(&l0, 2.0).unwrap()];
    assert_ne!(lights[0], lights[1]);
    let on = stabilize(&v, &relit, Some(&lights), &small_cfg(5, true)).unwrap();
    assert_ne!(on.video.frames()[0].data(), on.video.frames()[1].data());
    let off = stabilize(&v, &relit, None, &small_cfg(5, false)).unwrap();
    assert_eq!(off.video.frames()[0].data(), off.video.frames()[1].data());
    assert_eq!(on.epoch_loss.len(), 5);
}

#[test]
fn stabilization_fits_its_targets_and_is_deterministic() {
    let v = video(&[1.0, 1.0, 1.0]);
    let relit = video(&[0.8, 0.8, 0.8]);
    let cfg = small_cfg(60, false);
    let a = stabilize(&v, &relit, None, &cfg).unwrap();
    let b = stabilize(&v, &relit, None, &cfg).unwrap();
    for (x, y) in a.video.frames().iter().zip(b.video.frames()) {
        assert_eq!(x.data(), y.data());
    }
    let first = a.epoch_loss[0];
    let last = *a.epoch_loss.last().unwrap();
    assert!(last < 0.5 * first, "{first} -> {last}");
    let m = mask();
    for f in a.video.frames() {
        for r in 0..RES {
            for c in 0..RES {
                if !m.get(r, c) {
                    assert_eq!(f.pixel(r, c), &[0.0, 0.0, 0.0]);
                }
            }
        }
    }
}

#[test]
fn auto_stop_ends_training_early() {
    let v = video(&[1.0, 1.0]);
    let cfg = DvpConfig {
        auto_stop_psnr: Some(-1000.0),
        ..small_cfg(30, false)
    };
    let out = stabilize(&v, &v, None, &cfg).unwrap();
    assert_eq!(out.epoch_loss.len(), 1);
}
