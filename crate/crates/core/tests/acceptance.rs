//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stereoconv::attention::{attend, gradient_check, random_instance, AttentionMask, Pattern};
use stereoconv::metrics::{masked_metric, ms_ssim, psnr, Region};
use stereoconv::pipeline::{plan_chunks, plan_tiles, run_chunked, TileConfig, TiledRefiner};
use stereoconv::rectify::synthetic::TwoViewScene;
use stereoconv::rectify::{
    estimate_fundamental_ransac, rectify_matches, vertical_disparity_filter, CropRect, FundamentalMatrix,
    RansacConfig, RectificationResult, RectifyConfig, VerticalStats,
};
use stereoconv::refine::{
    assemble_conditioning, codec_by_name, forward_diffuse, make_schedule, v_target, ConditioningTensor, LatentGrid,
    PassthroughRefiner, Refiner, CONDITIONING_CHANNELS,
};
use stereoconv::types::{DepthMap, DisparityMap, Frame, Mask, VideoClip};
use stereoconv::warp::{forward_splat, warp_clip, SplatMode, WarpConfig};

#[derive(Default)]
struct Outcome {
    checks: Vec<(String, bool)>,
}

impl Outcome {
    fn check(&mut self, label: impl Into<String>, ok: bool) {
        self.checks.push((label.into(), ok));
    }

    /// Passes when `failures` is empty; otherwise shows the first few.
    fn none_failed(&mut self, label: &str, failures: &[String]) {
        if failures.is_empty() {
            self.check(label, true);
        } else {
            let shown: Vec<&str> = failures.iter().take(3).map(String::as_str).collect();
            self.check(format!("{label} [{} failures, e.g. {}]", failures.len(), shown.join(", ")), false);
        }
    }
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget_s: f64,
    run: fn(&mut Outcome),
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: 1, name: "attention cost formulas", budget_s: 1.0, run: attention_costs },
        Criterion { id: 2, name: "attention pattern reduction", budget_s: 5.0, run: pattern_reduction },
        Criterion { id: 3, name: "attention gradient fidelity", budget_s: 30.0, run: gradient_fidelity },
        Criterion { id: 4, name: "feed-forward limit", budget_s: 1.0, run: feed_forward_limit },
        Criterion { id: 5, name: "warp identity and oracle", budget_s: 5.0, run: warp_oracle },
        Criterion { id: 6, name: "rectification", budget_s: 10.0, run: rectification },
        Criterion { id: 7, name: "metrics", budget_s: 10.0, run: metrics },
        Criterion { id: 8, name: "conditioning layout", budget_s: 1.0, run: conditioning_layout },
        Criterion { id: 9, name: "tiling and chunking", budget_s: 10.0, run: tiling_chunking },
        Criterion { id: 10, name: "end-to-end CLI", budget_s: 30.0, run: end_to_end },
    ];
    let mut failed = 0;
    for c in &criteria {
        let mut out = Outcome::default();
        let start = Instant::now();
        let completed = catch_unwind(AssertUnwindSafe(|| (c.run)(&mut out))).is_ok();
        let secs = start.elapsed().as_secs_f64();
        out.check("ran to completion", completed);
        out.check(format!("runtime {secs:.2}s < {}s", c.budget_s), secs < c.budget_s);
        let bad: Vec<&str> = out.checks.iter().filter(|(_, ok)| !ok).map(|(l, _)| l.as_str()).collect();
        if bad.is_empty() {
            println!("PASS criterion {:>2} {} ({} checks, {secs:.2}s)", c.id, c.name, out.checks.len());
        } else {
            failed += 1;
            println!("FAIL criterion {:>2} {}: {}", c.id, c.name, bad.join("; "));
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn attention_costs(out: &mut Outcome) {
    let mut failures = Vec::new();
    for n in 1..=4usize {
        for h in 1..=4usize {
            for w in 1..=4usize {
                let (n64, hw) = (n as u64, (h * w) as u64);
                for (k, fraction) in [0.0, 0.3, 1.0].into_iter().enumerate() {
                    let inst = random_instance((n * 100 + h * 10 + w) as u64 * 3 + k as u64, n, h, w, 2, fraction);
                    let m = inst.mask.count() as u64;
                    let cases = [
                        (Pattern::Full, None, n64 * n64 * hw * hw),
                        (Pattern::Spatial, None, n64 * hw * hw),
                        (Pattern::Temporal, None, n64 * n64 * hw),
                        // unmasked queries see their own frame, masked ones every token
                        (Pattern::MaskedFull, Some(&inst.mask), (n64 * hw - m) * hw + m * n64 * hw),
                    ];
                    for (pattern, mask, expected) in cases {
                        let measured = attend(&inst.x, &inst.params, pattern, mask).unwrap().1.qk_dot_products;
                        if measured != expected {
                            failures.push(format!("{} N={n} h={h} w={w} m={m}: {measured} != {expected}", pattern.name()));
                        }
                    }
                }
            }
        }
    }
    out.none_failed("measured qk counts equal closed forms over {1..4}^3", &failures);
}

fn pattern_reduction(out: &mut Outcome) {
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let instances = 24;
    for seed in 0..instances {
        let (n, h, w, c) = (rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..=6));
        let inst = random_instance(seed, n, h, w, c, 0.5);
        let run = |pattern, mask: Option<&AttentionMask>| attend(&inst.x, &inst.params, pattern, mask).unwrap().0;
        let spatial = run(Pattern::Spatial, None);
        let full = run(Pattern::Full, None);
        let empty = run(Pattern::MaskedFull, Some(&AttentionMask::empty(n, h, w)));
        let all = run(Pattern::MaskedFull, Some(&AttentionMask::full(n, h, w)));
        if empty.data() != spatial.data() {
            failures.push(format!("seed {seed}: empty mask differs from spatial"));
        }
        if all.data() != full.data() {
            failures.push(format!("seed {seed}: full mask differs from full"));
        }
    }
    out.check(format!("{instances} random instances"), instances >= 20);
    out.none_failed("masked-full reduces bit-exactly at the mask extremes", &failures);
}

fn gradient_fidelity(out: &mut Outcome) {
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    let seeds = 20;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let (n, h, w, c) = (rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=8));
        let inst = random_instance(seed, n, h, w, c, 0.4);
        for pattern in Pattern::ALL {
            let mask = (pattern == Pattern::MaskedFull).then_some(&inst.mask);
            let err = gradient_check(&inst.x, &inst.params, pattern, mask, &inst.upstream, 1e-5).unwrap();
            worst = worst.max(err);
            if !(err < 1e-4) {
                failures.push(format!("seed {seed} {} N={n} h={h} w={w} c={c}: {err:.3e}", pattern.name()));
            }
        }
    }
    out.check(format!("{seeds} seeds"), seeds >= 20);
    out.none_failed(&format!("max relative error {worst:.2e} < 1e-4"), &failures);
}

fn feed_forward_limit(out: &mut Outcome) {
    let schedule = make_schedule(1000, 1e-4, 0.02).unwrap();
    let t = schedule.timesteps();
    let abar = schedule.alpha_bar(t);
    out.check(format!("alpha_bar(T) = {abar:.3e} < 1e-4"), abar < 1e-4);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (n, h, w, c) = (3, 5, 7, 4);
    let data = (0..n * h * w * c).map(|_| rng.gen_range(-3.0f32..3.0)).collect();
    let z = LatentGrid::new(n, h, w, c, data).unwrap();
    let eps = LatentGrid::zeros(n, h, w, c);
    let z_norm = z.max_abs() as f64;
    let z_t = forward_diffuse(&z, &eps, t, &schedule).unwrap();
    let zt_norm = z_t.max_abs() as f64;
    out.check(format!("|z_T| {zt_norm:.3e} <= 1e-2 |z|"), zt_norm <= 1e-2 * z_norm);
    let v = v_target(&z, &eps, t, &schedule).unwrap();
    let v_plus_z = v.data().iter().zip(z.data()).map(|(a, b)| (a + b).abs() as f64).fold(0.0, f64::max);
    out.check(format!("|v + z| {v_plus_z:.3e} <= 1e-2 |z|"), v_plus_z <= 1e-2 * z_norm);
}

fn textured_frame(h: usize, w: usize, seed: u64) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Frame::new(h, w, (0..h * w * 3).map(|_| rng.gen_range(0.05f32..1.0)).collect()).unwrap()
}

fn textured_clip(n: usize, h: usize, w: usize, seed: u64) -> VideoClip {
    VideoClip::new((0..n).map(|f| textured_frame(h, w, seed * 97 + f as u64)).collect(), 8.0).unwrap()
}

/// Target pixel `x` of a row shifted by integer disparity `d` is source `x + d`,
/// or a hole when that lies past the right edge.
fn uniform_shift_oracle(frame: &Frame, d: usize) -> (Frame, Mask) {
    let (h, w) = frame.dims();
    let mut warped = Frame::filled(h, w, [0.0; 3]);
    let mut holes = Mask::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            if x + d < w {
                warped.set_pixel(y, x, frame.pixel(y, x + d));
            } else {
                holes.set(y, x, true);
            }
        }
    }
    (warped, holes)
}

fn warp_oracle(out: &mut Outcome) {
    let clip = textured_clip(3, 9, 20, 5);
    let depth: Vec<DepthMap> = (0..3)
        .map(|f| DepthMap::new(9, 20, (0..180).map(|i| 1.0 + ((i * 7 + f) % 13) as f32).collect()).unwrap())
        .collect();
    let identity = warp_clip(&clip, &depth, &WarpConfig::with_max_disparity(0.0)).unwrap();
    out.check(
        "D_max = 0 is a bit-exact identity with an empty mask",
        identity.warped == clip && identity.masked_pixels() == 0,
    );

    let mut failures = Vec::new();
    for d in 0..=22usize {
        let frame = textured_frame(6, 20, d as u64);
        let splat = forward_splat(&frame, &DisparityMap::uniform(6, 20, d as f32).unwrap(), SplatMode::Nearest);
        let (warped, holes) = uniform_shift_oracle(&frame, d);
        if splat.warped != warped || splat.holes != holes {
            failures.push(format!("splat d={d}"));
        }
    }
    for d in 1..=6usize {
        let clip = textured_clip(2, 7, 24, 40 + d as u64);
        let flat = vec![DepthMap::new(7, 24, vec![3.0; 7 * 24]).unwrap(); 2];
        let result = warp_clip(&clip, &flat, &WarpConfig::with_max_disparity(d as f32)).unwrap();
        for (f, frame) in clip.frames().iter().enumerate() {
            let (warped, holes) = uniform_shift_oracle(frame, d);
            if result.warped.frames()[f] != warped || result.mask[f] != holes {
                failures.push(format!("warp_clip d={d} frame {f}"));
            }
        }
    }
    out.none_failed("uniform integer disparities match destination enumeration", &failures);

    // 1x8 row, left half at disparity 4, right half at 0
    let row = textured_frame(1, 8, 77);
    let disp = DisparityMap::new(1, 8, vec![4.0, 4.0, 4.0, 4.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let splat = forward_splat(&row, &disp, SplatMode::Nearest);
    out.check(
        "1x8 two-layer row leaves a 4-pixel band in front of the far layer",
        splat.holes.data() == [1, 1, 1, 1, 0, 0, 0, 0],
    );

    let near = [0.9, 0.3, 0.2];
    let far = [0.2, 0.3, 0.9];
    let mut failures = Vec::new();
    let mut holes_seen = 0;
    for (d_max, x0, kernel) in [(4.0, 10, 11), (5.0, 3, 11), (7.0, 14, 1), (3.0, 20, 5)] {
        let (h, w, bw) = (10, 32, 8);
        let mut frame = Frame::filled(h, w, far);
        let mut d = vec![10.0; h * w];
        for y in 2..8 {
            for x in x0..(x0 + bw).min(w) {
                frame.set_pixel(y, x, near);
                d[y * w + x] = 2.0;
            }
        }
        let clip = VideoClip::new(vec![frame], 8.0).unwrap();
        let cfg = WarpConfig {
            max_disparity: d_max,
            closing_kernel: kernel,
            ..WarpConfig::default()
        };
        let result = warp_clip(&clip, &[DepthMap::new(h, w, d).unwrap()], &cfg).unwrap();
        let (warped, mask) = (&result.warped.frames()[0], &result.mask[0]);
        holes_seen += mask.count();
        for y in 0..h {
            for x in 0..w {
                if !mask.get(y, x) {
                    continue;
                }
                if let Some(xr) = (x + 1..w).find(|&xr| !mask.get(y, xr)) {
                    if warped.pixel(y, xr) != far {
                        failures.push(format!("D_max={d_max} ({y},{x}) sees {:?} at x={xr}", warped.pixel(y, xr)));
                    }
                }
            }
        }
    }
    out.check("two-layer scenes produce holes", holes_seen > 0);
    out.none_failed("every hole has the far layer or the frame edge to its right", &failures);
}

fn rectification(out: &mut Outcome) {
    let mut sampson_failures = Vec::new();
    let mut rect_failures = Vec::new();
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..5u64 {
        let scene = TwoViewScene::rotated(seed);
        let (matches, outlier) = scene.matches_with_outliers(150, 0.3, seed + 11);
        let cfg = RectifyConfig {
            ransac: RansacConfig {
                seed,
                ..RansacConfig::default()
            },
            ..RectifyConfig::default()
        };
        let ransac = estimate_fundamental_ransac(&matches, &cfg.ransac).unwrap();
        let clean: Vec<_> = matches.iter().zip(&outlier).filter(|(_, &o)| !o).map(|(m, _)| *m).collect();
        let sampson = clean.iter().map(|m| ransac.fundamental.sampson(m)).fold(0.0, f64::max);
        worst.0 = worst.0.max(sampson);
        if !(sampson < 1e-6) {
            sampson_failures.push(format!("scene {seed}: {sampson:.2e}"));
        }

        let report = rectify_matches(&scene.match_set(matches), &cfg).unwrap();
        let moved: Vec<_> = clean.iter().map(|m| report.result.transform(m)).collect();
        let vmax = moved.iter().map(|m| (m.yl - m.yr).abs()).fold(0.0, f64::max);
        let dmin = moved.iter().map(|m| m.xl - m.xr).fold(f64::INFINITY, f64::min);
        worst.1 = worst.1.max(vmax);
        worst.2 = worst.2.max(dmin.abs());
        if !(vmax < 0.1) || !(dmin.abs() <= 0.5) {
            rect_failures.push(format!("scene {seed}: vertical {vmax:.3e}, min disparity {dmin:.3}"));
        }
        if !report.accepted {
            rect_failures.push(format!("scene {seed}: rejected by the vertical filter"));
        }
    }
    out.none_failed(&format!("Sampson residual on clean points {:.2e} < 1e-6", worst.0), &sampson_failures);
    out.none_failed(
        &format!("vertical disparity {:.2e} < 0.1 px, |min disparity| {:.3} <= 0.5 px", worst.1, worst.2),
        &rect_failures,
    );

    let truth = FundamentalMatrix::from_matrix(TwoViewScene::rotated(3).fundamental()).unwrap();
    out.check(
        "true F has Sampson residual < 1e-6 on noiseless matches",
        TwoViewScene::rotated(3).matches(40, 1).iter().all(|m| truth.sampson(m) < 1e-6),
    );

    let constructed = |vmax: f64| RectificationResult {
        h_left: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        h_right: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        crop: CropRect {
            x0: 0,
            y0: 0,
            width: 10,
            height: 10,
        },
        shift: 0.0,
        inliers: 20,
        vertical_disparity: VerticalStats { max: vmax, mean: vmax / 2.0 },
        min_disparity: 0.0,
        max_disparity: 5.0,
    };
    let expected = [(0.0, true), (1.5, true), (2.0, true), (2.01, false), (3.0, false), (40.0, false)];
    let wrong: Vec<String> = expected
        .iter()
        .filter(|(v, accept)| vertical_disparity_filter(&constructed(*v), 2.0) != *accept)
        .map(|(v, accept)| format!("vmax {v}: expected accept={accept}"))
        .collect();
    out.none_failed("2-px vertical filter accepts and rejects constructed cases", &wrong);
}

fn gray_clip(n: usize, h: usize, w: usize, v: f32) -> VideoClip {
    VideoClip::new(vec![Frame::filled(h, w, [v; 3]); n], 8.0).unwrap()
}

fn metrics(out: &mut Outcome) {
    let a = gray_clip(2, 32, 48, 0.4);
    let b = gray_clip(2, 32, 48, 0.4 + 16.0 / 255.0);
    let db = psnr(&a, &b).unwrap().db;
    out.check(format!("PSNR of a uniform 16/255 difference {db:.4} dB = 24.035 +- 0.001"), (db - 24.035).abs() <= 0.001);

    let c = textured_clip(3, 64, 80, 9);
    let same = ms_ssim(&c, &c).unwrap().score;
    out.check(format!("MS-SSIM(a, a) = {same}"), same == 1.0);

    let reference = textured_clip(2, 48, 64, 1);
    let predicted = textured_clip(2, 48, 64, 2);
    let mut masks = vec![Mask::zeros(48, 64); 2];
    for m in masks.iter_mut() {
        for y in 10..30 {
            for x in 5..40 {
                m.set(y, x, true);
            }
        }
    }
    let mut perturbed = predicted.clone().into_frames();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (f, frame) in perturbed.iter_mut().enumerate() {
        for y in 0..48 {
            for x in 0..64 {
                if !masks[f].get(y, x) {
                    frame.set_pixel(y, x, [rng.gen(), rng.gen(), rng.gen()]);
                }
            }
        }
    }
    let perturbed = VideoClip::new(perturbed, 8.0).unwrap();
    let inside = |p: &VideoClip| {
        (
            masked_metric(&reference, p, &masks, Region::Inside, psnr).unwrap().db,
            masked_metric(&reference, p, &masks, Region::Inside, ms_ssim).unwrap().score,
        )
    };
    let (before, after) = (inside(&predicted), inside(&perturbed));
    out.check(
        format!("inside-region metrics unchanged by outside perturbation ({before:?} vs {after:?})"),
        before == after,
    );
    let outside_before = masked_metric(&reference, &predicted, &masks, Region::Outside, psnr).unwrap().db;
    let outside_after = masked_metric(&reference, &perturbed, &masks, Region::Outside, psnr).unwrap().db;
    out.check("outside-region PSNR does see the perturbation", outside_before != outside_after);
}

fn conditioning_layout(out: &mut Outcome) {
    for name in ["identity", "patchify8"] {
        let codec = codec_by_name(name).unwrap();
        let (n, h, w) = (3, 16, 24);
        let left = textured_clip(n, h, w, 21);
        let warped = textured_clip(n, h, w, 22);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let masks: Vec<Mask> = (0..n)
            .map(|_| Mask::new(h, w, (0..h * w).map(|_| rng.gen_bool(0.5) as u8).collect()).unwrap())
            .collect();
        let cond = assemble_conditioning(&left, &warped, &masks, codec.as_ref()).unwrap();
        let (left_z, warped_z) = (codec.encode(&left).unwrap(), codec.encode(&warped).unwrap());
        let f = codec.factor();
        let (lh, lw) = (h / f, w / f);
        let expected_mask = |frame: usize, y: usize, x: usize| {
            let mut count = 0;
            for yy in y * f..(y + 1) * f {
                for xx in x * f..(x + 1) * f {
                    count += masks[frame].get(yy, xx) as usize;
                }
            }
            if 2 * count >= f * f {
                1.0
            } else {
                0.0
            }
        };
        let mut misplaced = Vec::new();
        for frame in 0..n {
            for y in 0..lh {
                for x in 0..lw {
                    let pos = (frame * lh + y) * lw + x;
                    let cell = &cond.data()[pos * 13..(pos + 1) * 13];
                    let latent = |g: &LatentGrid| g.data()[pos * 4..(pos + 1) * 4].to_vec();
                    if cell[0..4] != [0.0; 4]
                        || cell[4..8] != latent(&left_z)[..]
                        || cell[8..12] != latent(&warped_z)[..]
                        || cell[12] != expected_mask(frame, y, x)
                    {
                        misplaced.push(format!("frame {frame} ({y},{x})"));
                    }
                }
            }
        }
        out.check(
            format!("{name}: 13 channels"),
            cond.channels() == 13 && CONDITIONING_CHANNELS == 13 && cond.data().len() == n * lh * lw * 13,
        );
        out.none_failed(&format!("{name}: zero initial | left | warped | mask order"), &misplaced);
        let parts = cond.disassemble();
        let rebuilt = ConditioningTensor::from_parts(&parts).unwrap();
        out.check(
            format!("{name}: disassembly is bit-exact"),
            parts.left == left_z && parts.warped == warped_z && rebuilt == cond,
        );
    }
}

fn tiling_chunking(out: &mut Outcome) {
    let mut failures = Vec::new();
    for (h, w, th, tw, oy, ox) in [
        (64, 96, 32, 32, 8, 16),
        (37, 53, 16, 20, 5, 7),
        (12, 12, 12, 4, 0, 3),
        (40, 40, 13, 17, 12, 16),
        (9, 100, 9, 9, 8, 8),
    ] {
        let plan = plan_tiles(h, w, th, tw, oy, ox).unwrap();
        let worst = plan.weight_sums().iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
        if !(worst <= 1e-6) {
            failures.push(format!("{h}x{w} tiles {th}x{tw} overlap {oy}x{ox}: {worst:.2e}"));
        }
    }
    out.none_failed("tile weights sum to 1 within 1e-6 at every pixel", &failures);

    let (n, h, w) = (20, 24, 40);
    let left = textured_clip(n, h, w, 31);
    let warped = textured_clip(n, h, w, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let masks: Vec<Mask> = (0..n)
        .map(|_| Mask::new(h, w, (0..h * w).map(|_| rng.gen_bool(0.2) as u8).collect()).unwrap())
        .collect();
    let untiled = PassthroughRefiner.refine(&left, &warped, &masks).unwrap();
    let tiled = TiledRefiner::new(
        Arc::new(PassthroughRefiner),
        codec_by_name("identity").unwrap(),
        TileConfig {
            height: 16,
            width: 16,
            overlap_y: 8,
            overlap_x: 4,
        },
    );
    out.check(
        "passthrough tiled run equals untiled bit for bit",
        tiled.refine(&left, &warped, &masks).unwrap() == untiled,
    );
    let plan = plan_chunks(n, 8, 3).unwrap();
    out.check(
        "passthrough chunked run equals unchunked bit for bit",
        run_chunked(&left, &warped, &masks, &plan, &PassthroughRefiner).unwrap() == untiled,
    );
    out.check(
        "passthrough chunked and tiled run equals plain run bit for bit",
        run_chunked(&left, &warped, &masks, &plan, &tiled).unwrap() == untiled,
    );

    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let triples = 50;
    for _ in 0..triples {
        let total = rng.gen_range(1..=300usize);
        let len = rng.gen_range(1..=40usize);
        let m = rng.gen_range(0..len);
        let plan = plan_chunks(total, len, m).unwrap();
        let mut fresh = vec![0u32; total];
        for win in &plan.windows {
            for f in win.start + win.carryover..win.end {
                fresh[f] += 1;
            }
        }
        let sum: usize = plan.windows.iter().map(|w| w.len() - w.carryover).sum();
        if fresh.iter().any(|&c| c != 1) || sum != total || plan.windows[0].carryover != 0 {
            failures.push(format!("total={total} N_c={len} m={m}"));
        }
    }
    out.none_failed(&format!("{triples} random chunk plans cover each frame once"), &failures);
}

fn run_cli(args: &[&str]) -> (bool, String) {
    let output = Command::new(env!("CARGO_BIN_EXE_stereoconv")).args(args).output().unwrap();
    (output.status.success(), String::from_utf8_lossy(&output.stderr).into_owned())
}

fn png_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn end_to_end(out: &mut Outcome) {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let s = |p: &Path| p.to_str().unwrap().to_owned();
    let (scene, right) = (root.join("scene"), root.join("right"));
    let (ok, err) = run_cli(&["synth", "--out", &s(&scene), "--frames", "16"]);
    out.check(format!("synth succeeds {err}"), ok);

    let convert = [
        "convert",
        "--left",
        &s(&scene.join("left")),
        "--depth",
        &s(&scene.join("depth")),
        "--out",
        &s(&right),
        "--refiner",
        "farplane",
        "--max-disparity",
        "12",
        "--seed",
        "7",
    ];
    let (ok, err) = run_cli(&convert);
    out.check(format!("first convert succeeds {err}"), ok);
    let first = png_files(&right);
    let first_manifest = fs::read_to_string(right.join("manifest.json")).unwrap_or_default();
    fs::remove_dir_all(&right).unwrap();
    let (ok, err) = run_cli(&convert);
    out.check(format!("second convert succeeds {err}"), ok);
    let second = png_files(&right);
    let second_manifest = fs::read_to_string(right.join("manifest.json")).unwrap_or_default();

    out.check(format!("16 right-view frames written (got {})", first.len()), first.len() == 16);
    let mut black = 0;
    for (_, bytes) in &first {
        let img = image::load_from_memory(bytes).unwrap().to_rgb8();
        black += img.pixels().filter(|p| p.0 == [0, 0, 0]).count();
    }
    out.check(format!("no sentinel-hole pixels in the output ({black} found)"), black == 0);
    out.check("outputs are byte-identical across runs", !first.is_empty() && first == second);

    let parse = |text: &str| serde_json::from_str::<serde_json::Value>(text).ok();
    match (parse(&first_manifest), parse(&second_manifest)) {
        (Some(mut a), Some(mut b)) => {
            let fraction = a["mask"]["masked_fraction"].as_f64().unwrap_or(-1.0);
            out.check(format!("manifest reports masked fraction {fraction:.4} > 0"), fraction > 0.0);
            let stages: Vec<&str> = a["timings"]
                .as_array()
                .map(|t| t.iter().filter_map(|s| s["stage"].as_str()).collect())
                .unwrap_or_default();
            out.check(
                format!("manifest has per-stage timings {stages:?}"),
                stages == ["load", "warp", "refine", "pack"],
            );
            out.check(
                "manifest records the config and outputs",
                a["config"]["refiner"] == "farplane" && a["config"]["seed"] == 7 && a["outputs"].as_array().map_or(0, Vec::len) == 16,
            );
            a.as_object_mut().unwrap().remove("timings");
            b.as_object_mut().unwrap().remove("timings");
            out.check("manifests identical apart from timings", a == b);
        }
        _ => out.check("manifest is valid JSON", false),
    }
}
