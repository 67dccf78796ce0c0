use protoprior_web::{Session, Sliders, SAMPLE_SIDE};

fn still() -> Sliders {
    Sliders {
        rotation_deg: 0.0,
        scale: 0.0,
        translation_px: 0.0,
        noise_sigma: 0.0,
        clutter: 0.0,
    }
}

#[test]
fn clean_sample_matches_its_own_prototype() {
    let mut s = Session::new(6, 7).unwrap();
    for class in 0..6 {
        let px = s.corrupt(class, &still(), 1).unwrap();
        assert_eq!(px.len(), SAMPLE_SIDE * SAMPLE_SIDE * 4);
        let sims = s.similarities();
        assert_eq!(protoprior::net::argmax(&sims), class);
        let p = s.probabilities(20.0).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(protoprior::net::argmax(&p), class);
    }
}

#[test]
fn cells_have_grid_shape() {
    let s = Session::new(3, 1).unwrap();
    let cells = s.cells().unwrap();
    assert_eq!(s.cells_per_side(), 6);
    assert_eq!(cells.len(), 6 * 6 * s.num_bins());
    assert!(cells.iter().all(|v| *v >= 0.0));
}

#[test]
fn corruption_is_seeded() {
    let mut s = Session::new(2, 3).unwrap();
    let noisy = Sliders {
        rotation_deg: 15.0,
        noise_sigma: 0.1,
        ..still()
    };
    let a = s.corrupt(1, &noisy, 5).unwrap();
    assert_eq!(a, s.corrupt(1, &noisy, 5).unwrap());
    assert_ne!(a, s.corrupt(1, &noisy, 6).unwrap());
}

#[test]
fn bad_inputs_are_errors() {
    let mut s = Session::new(2, 3).unwrap();
    assert!(s.corrupt(2, &still(), 0).is_err());
    assert!(s.template_rgba(9).is_err());
    let negative = Sliders {
        noise_sigma: -1.0,
        ..still()
    };
    assert!(s.corrupt(0, &negative, 0).is_err());
    assert!(s.probabilities(f64::NAN).is_err());
    assert!(Session::new(0, 1).is_err());
}
