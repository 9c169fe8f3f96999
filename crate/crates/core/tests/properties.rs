use std::path::Path;

use collab_deblur::estimate::{run_collaboration_sweep, SweepParams};
use collab_deblur::imaging::io::{format_image_text, parse_image_text};
use collab_deblur::imaging::{convolve, convolve_circular_fft, Boundary, Image, Kernel};
use collab_deblur::nn::{ops, Graph, Tensor};
use collab_deblur::patches::{format_placements, parse_placements, stitch, tile_uniform, Placement};
use collab_deblur::synth::{dead_leaves_pool, gaussian_kernel, motion_kernel, BlurConfig};
use proptest::prelude::*;

fn image(h: usize, w: usize, c: usize, values: &[f64]) -> Image<f64> {
    Image::from_fn(h, w, c, |ch, y, x| values[(ch * h * w + y * w + x) % values.len()]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tile_then_stitch_is_identity(
        patch in 4usize..20,
        dh in 0usize..40,
        dw in 0usize..40,
        overlap in 0.0f64..0.75,
        values in prop::collection::vec(-1.0f64..1.0, 1..64),
    ) {
        let (h, w) = (patch + dh, patch + dw);
        let im = image(h, w, 1, &values);
        let back = stitch(&tile_uniform(&im, patch, overlap).unwrap(), h, w).unwrap();
        for (a, b) in im.data().iter().zip(back.data()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn circular_convolution_matches_fft(
        h in 5usize..14,
        w in 5usize..14,
        taps in prop::collection::vec(0.0f64..1.0, 9),
        values in prop::collection::vec(0.0f64..1.0, 1..50),
    ) {
        let im = image(h, w, 1, &values);
        let k = Kernel::from_taps(3, taps).unwrap();
        let a = convolve(&im, &k, Boundary::Circular).unwrap();
        let b = convolve_circular_fft(&im, &k).unwrap();
        let scale = a.data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn gaussian_axes_swap_with_quarter_turn(
        sa in 0.3f64..3.0,
        sb in 0.3f64..3.0,
        theta in 0.0f64..6.3,
    ) {
        let a: Kernel<f64> = gaussian_kernel(&BlurConfig::new(sa, sb, theta, 0.0).unwrap()).unwrap();
        let b: Kernel<f64> = gaussian_kernel(&BlurConfig::new(sb, sa, theta + std::f64::consts::FRAC_PI_2, 0.0).unwrap()).unwrap();
        prop_assert_eq!(a.size(), b.size());
        prop_assert!((a.taps().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (x, y) in a.taps().iter().zip(b.taps()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn stack_max_is_permutation_invariant(
        n in 1usize..6,
        values in prop::collection::vec(-1.0f64..1.0, 1..40),
        rot in 0usize..6,
    ) {
        let m = 2 * 3 * 3;
        let data: Vec<f64> = (0..n * m).map(|i| values[i % values.len()] + i as f64 * 1e-3).collect();
        let x = Tensor::new(&[n, 2, 3, 3], data.clone()).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        order.rotate_left(rot % n);
        let mut pd = vec![0.0; n * m];
        for (i, &src) in order.iter().enumerate() {
            pd[i * m..(i + 1) * m].copy_from_slice(&data[src * m..(src + 1) * m]);
        }
        let g = Graph::new();
        let a = ops::stack_max(g.input(x), n).unwrap().value();
        let b = ops::stack_max(g.input(Tensor::new(&[n, 2, 3, 3], pd).unwrap()), n).unwrap().value();
        // Every slot holds the same global maximum, so the result does not move.
        prop_assert_eq!(a, b);
    }

    #[test]
    fn text_formats_round_trip(
        h in 1usize..6,
        w in 1usize..6,
        rgb in any::<bool>(),
        values in prop::collection::vec(-1e3f64..1e3, 1..30),
        tops in prop::collection::vec((0usize..100, 0usize..100, 1usize..50, 1usize..50), 0..6),
    ) {
        let im = image(h, w, if rgb { 3 } else { 1 }, &values);
        let back: Image<f64> = parse_image_text(Path::new("mem"), &format_image_text(&im)).unwrap();
        prop_assert_eq!(back, im);
        let placements: Vec<Placement> = tops.iter().map(|&(t, l, ph, pw)| Placement::new(t, l, ph, pw)).collect();
        prop_assert_eq!(parse_placements(Path::new("mem"), &format_placements(&placements)).unwrap(), placements);
    }
}

#[test]
fn sweep_does_not_depend_on_thread_count() {
    let pool = dead_leaves_pool::<f64>(6, 24, 24, 1, 3).unwrap();
    let kernels = vec![motion_kernel(7, 1).unwrap(), motion_kernel(5, 2).unwrap()];
    let params = SweepParams {
        ns: vec![1, 3, 6],
        seeds: vec![0, 1],
        ..SweepParams::default()
    };
    let csv = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_collaboration_sweep(&pool, &kernels, &params).unwrap().to_csv())
    };
    let one = csv(1);
    assert_eq!(one, csv(3));
    assert_eq!(one, csv(8));
}
