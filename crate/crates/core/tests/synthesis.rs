use focusfuse_core::{
    build_focus_volume, dff_depth, make_depth_map, make_focus_schedule, render_defocus_frame,
    synthesize_focal_stack, Image, Spacing, ThinLensCamera,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn texture(w: usize, h: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::new(w, h, (0..w * h).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

fn step_depth(w: usize, h: usize, near: f64, far: f64) -> focusfuse_core::DepthMap {
    make_depth_map(w, h, (0..w * h).map(|i| if i % w < w / 2 { near } else { far }).collect()).unwrap()
}

#[test]
fn stack_does_not_depend_on_thread_count() {
    let (w, h) = (48, 40);
    let img = texture(w, h, 1);
    let depth = step_depth(w, h, 0.4, 1.6);
    let schedule = make_focus_schedule(0.4, 1.6, 6, Spacing::UniformDiopter).unwrap();
    let cam = ThinLensCamera::default();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| synthesize_focal_stack(&img, &depth, &cam, &schedule).unwrap())
    };
    let one = run(1);
    for threads in [2, 4, 7] {
        let other = run(threads);
        for (a, b) in one.frames().iter().zip(other.frames()) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}

#[test]
fn in_focus_plane_stays_sharp_and_the_other_blurs() {
    let (w, h) = (64, 32);
    let img = texture(w, h, 2);
    let depth = step_depth(w, h, 0.5, 2.0);
    let frame = render_defocus_frame(&img, &depth, &ThinLensCamera::default(), 0.5).unwrap();
    for y in 0..h {
        for x in 0..w / 2 {
            assert_eq!(frame.at(x, y), img.at(x, y));
        }
    }
    let var = |im: &Image, x0: usize| {
        let v: Vec<f64> = (0..h).flat_map(|y| (x0..x0 + 16).map(move |x| (x, y))).map(|(x, y)| im.at(x, y)).collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / v.len() as f64
    };
    assert!(var(&frame, 44) < 0.1 * var(&img, 44));
}

#[test]
fn planes_on_the_schedule_are_recovered() {
    let (w, h) = (64, 48);
    let img = texture(w, h, 3);
    let schedule = make_focus_schedule(0.5, 1.5, 5, Spacing::UniformDiopter).unwrap();
    let d = schedule.distances();
    let depth = step_depth(w, h, d[1], d[3]);
    let stack = synthesize_focal_stack(&img, &depth, &ThinLensCamera::default(), &schedule).unwrap();
    let (dff, _) = dff_depth(&build_focus_volume(&stack, 7).unwrap(), false).unwrap();
    let hits = (0..w * h).filter(|&i| dff.value(i) == depth.value(i)).count();
    assert!(hits as f64 >= 0.95 * (w * h) as f64, "{hits}");
}
