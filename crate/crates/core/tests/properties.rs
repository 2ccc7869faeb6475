use proptest::prelude::*;

use svcavail::geo_cluster::{haversine, GeoPoint, EARTH_RADIUS_KM};
use svcavail::nn::{softmax, Tensor};
use svcavail::series_gaf::{encode_window, gadf, gasf, make_label_upto, paa, rescale_to_unit, GafOptions, MultiStepLabel};
use svcavail::pipeline::split;
use svcavail::availability::SplitFractions;

fn point() -> impl Strategy<Value = GeoPoint> {
    (-90.0..=90.0f64, -180.0..=180.0f64).prop_map(|(a, b)| GeoPoint::new(a, b).unwrap())
}

proptest! {
    #[test]
    fn haversine_is_a_metric(p in point(), q in point(), r in point()) {
        let d = |a: &GeoPoint, b: &GeoPoint| haversine(a, b, EARTH_RADIUS_KM).unwrap();
        prop_assert_eq!(d(&p, &q), d(&q, &p));
        prop_assert!(d(&p, &q) >= 0.0);
        prop_assert!(d(&p, &r) <= d(&p, &q) + d(&q, &r) + 1e-6);
    }

    #[test]
    fn gaf_images_are_bounded_and_structured(w in prop::collection::vec(-100.0..100.0f64, 1..40)) {
        let x = rescale_to_unit(&w);
        let s = gasf(&x).unwrap();
        let d = gadf(&x).unwrap();
        for i in 0..x.len() {
            for j in 0..x.len() {
                prop_assert!(s.get(i, j).abs() <= 1.0 && d.get(i, j).abs() <= 1.0);
                prop_assert_eq!(s.get(i, j), s.get(j, i));
                prop_assert_eq!(d.get(i, j), -d.get(j, i));
            }
        }
    }

    #[test]
    fn encoded_pairs_are_square(w in prop::collection::vec(0.0..=1.0f64, 8..64), m in 1usize..8) {
        let opts = GafOptions { paa: Some(m), ..GafOptions::default() };
        let p = encode_window(&w, &opts, Default::default()).unwrap();
        prop_assert_eq!(p.size(), m);
        prop_assert_eq!(p.gadf.size(), m);
    }

    #[test]
    fn paa_keeps_the_mean(frames in 1usize..10, per in 1usize..10, seed in any::<u64>()) {
        let k = frames * per;
        let w: Vec<f64> = (0..k).map(|i| ((seed.wrapping_add(i as u64) % 97) as f64) - 48.0).collect();
        let p = paa(&w, frames).unwrap();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        prop_assert!((mean(&p) - mean(&w)).abs() < 1e-12);
    }

    #[test]
    fn labels_round_trip(gamma in 1usize..=8, raw in any::<usize>()) {
        let c = raw % (1 << gamma);
        let l = MultiStepLabel::from_class(c, gamma).unwrap();
        let future: Vec<f64> = l.bits().iter().map(|&b| f64::from(b)).collect();
        prop_assert_eq!(make_label_upto(&future, 8).unwrap().class_index(), c);
    }

    #[test]
    fn softmax_rows_sum_to_one(v in prop::collection::vec(-50.0..50.0f64, 2..12)) {
        let n = v.len();
        let p = softmax(&Tensor::new(vec![1, n], v).unwrap()).unwrap();
        prop_assert!((p.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.data().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn split_is_a_partition(n in 0usize..300, seed in any::<u64>()) {
        let items: Vec<usize> = (0..n).collect();
        let s = split(&items, SplitFractions::default(), seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, items);
    }
}
