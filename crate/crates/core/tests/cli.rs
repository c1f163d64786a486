use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use noise_regen::colorspace::{ColorSpace, PlanarImage};
use noise_regen::estimate::{estimate_model, EstimateConfig};
use noise_regen::io::{decode_image, encode_png, encode_ppm};
use noise_regen::model_fit::{NoiseModel, ALPHA_RANGE, BETA_RANGE, GAMMA_RANGE};
use noise_regen::plane::Plane;
use noise_regen::sidecar::{decode_sidecar, encode_sidecar, step};
use noise_regen::OpsinConstants;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run(args: &[&Path]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_noise-regen")).args(args).output().unwrap();
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn p(s: &str) -> PathBuf {
    PathBuf::from(s)
}

fn gray(w: usize, h: usize, v: f64) -> PlanarImage {
    PlanarImage::uniform(ColorSpace::Rgb, w, h, [v; 3])
}

/// Mid-gray with small independent per-pixel noise and a slow ramp.
fn noisy(w: usize, h: usize, seed: u64) -> PlanarImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plane = |off: f64| Plane::from_fn(w, h, |x, _| (off + 60.0 * x as f64 / w as f64 + rng.random_range(-4.0..4.0)).round());
    let planes = [plane(90.0), plane(100.0), plane(80.0)];
    PlanarImage::new(ColorSpace::Rgb, planes).unwrap()
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, bytes).unwrap();
    path
}

fn kv(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
        .parse()
        .unwrap()
}

#[test]
fn flat_gray_png_gives_near_zero_model() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "flat.png", &encode_png(&gray(64, 64, 128.0)).unwrap());
    let sidecar = dir.path().join("flat.nrg");
    let r = run(&[&p("estimate"), &input, &sidecar]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let bytes = fs::read(&sidecar).unwrap();
    assert_eq!(bytes.len(), 11);
    let m = decode_sidecar(&bytes).unwrap();
    for i in 1..=10 {
        assert!(m.predict(f64::from(i) / 10.0) <= 1e-3, "{m:?}");
    }
    assert!(r.stdout.contains("sample_count="));
}

#[test]
fn tiny_image_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "tiny.ppm", &encode_ppm(&gray(8, 8, 50.0)));
    let r = run(&[&p("estimate"), &input, &dir.path().join("t.nrg")]);
    assert_eq!(r.code, 3, "{}", r.stderr);
    let input = write(dir.path(), "narrow.ppm", &encode_ppm(&gray(23, 100, 50.0)));
    assert_eq!(run(&[&p("estimate"), &input, &dir.path().join("t.nrg")]).code, 3);
    assert!(!dir.path().join("t.nrg").exists());
}

#[test]
fn unreadable_images_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let junk = write(dir.path(), "junk.ppm", b"hello");
    assert_eq!(run(&[&p("estimate"), &junk, &dir.path().join("x.nrg")]).code, 2);
    assert_eq!(run(&[&p("estimate"), &dir.path().join("missing.ppm"), &dir.path().join("x.nrg")]).code, 2);

    let mut png16 = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut png16, 32, 32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Sixteen);
        enc.write_header().unwrap().write_image_data(&vec![0; 32 * 32 * 6]).unwrap();
    }
    let input = write(dir.path(), "deep.png", &png16);
    let r = run(&[&p("estimate"), &input, &dir.path().join("x.nrg")]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("bit depth 16"), "{}", r.stderr);

    let sidecar = write(dir.path(), "ok.nrg", &encode_sidecar(&NoiseModel::NULL).unwrap());
    let r = run(&[&p("apply"), &input, &sidecar, &dir.path().join("o.ppm")]);
    assert_eq!(r.code, 2);
}

#[test]
fn bad_sidecars_exit_four() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "in.ppm", &encode_ppm(&noisy(32, 32, 1)));
    let good = encode_sidecar(&NoiseModel::new(0.1, 0.01, -0.5)).unwrap();
    let mut magic = good;
    magic[0] = b'X';
    let mut version = good;
    version[4] = 9;
    for (name, bytes) in [("short", &good[..7]), ("magic", &magic[..]), ("version", &version[..])] {
        let sc = write(dir.path(), name, bytes);
        let r = run(&[&p("apply"), &input, &sc, &dir.path().join("o.ppm")]);
        assert_eq!(r.code, 4, "{name}: {}", r.stderr);
    }
    assert_eq!(run(&[&p("apply"), &input, &dir.path().join("none.nrg"), &dir.path().join("o.ppm")]).code, 4);
    assert!(!dir.path().join("o.ppm").exists());
}

#[test]
fn zero_level_scale_is_identity_up_to_quantisation() {
    let dir = tempfile::tempdir().unwrap();
    let img = noisy(64, 48, 2);
    let input = write(dir.path(), "in.ppm", &encode_ppm(&img));
    let sc = write(dir.path(), "m.nrg", &encode_sidecar(&NoiseModel::new(0.3, 0.1, -1.0)).unwrap());
    let out = dir.path().join("out.ppm");
    let r = run(&[&p("apply"), &input, &sc, &out, &p("--level-scale"), &p("0")]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let back = decode_image(&fs::read(&out).unwrap()).unwrap();
    for c in 0..3 {
        for (a, b) in img.plane(c).as_slice().iter().zip(back.plane(c).as_slice()) {
            assert!((a - b).abs() <= 1.0);
        }
    }
}

#[test]
fn apply_is_deterministic_and_seed_dependent() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "in.ppm", &encode_ppm(&noisy(80, 60, 3)));
    let sc = write(dir.path(), "m.nrg", &encode_sidecar(&NoiseModel::new(0.05, 0.02, -0.5)).unwrap());
    let outs: Vec<PathBuf> = ["a.png", "b.png", "c.png"].iter().map(|n| dir.path().join(n)).collect();
    for (out, seed) in outs.iter().zip(["7", "7", "8"]) {
        let r = run(&[&p("apply"), &input, &sc, out, &p("--seed"), &p(seed)]);
        assert_eq!(r.code, 0, "{}", r.stderr);
    }
    let bytes: Vec<_> = outs.iter().map(|o| fs::read(o).unwrap()).collect();
    assert_eq!(bytes[0], bytes[1]);
    assert_ne!(bytes[0], bytes[2]);
    assert!(bytes[0].starts_with(b"\x89PNG"));
}

#[test]
fn invalid_flags_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "in.ppm", &encode_ppm(&noisy(32, 32, 4)));
    let sc = write(dir.path(), "m.nrg", &encode_sidecar(&NoiseModel::NULL).unwrap());
    let out = dir.path().join("o.ppm");
    assert_eq!(run(&[&p("apply"), &input, &sc, &out, &p("--psi"), &p("1.5")]).code, 2);
    assert_eq!(run(&[&p("apply"), &input, &sc, &out, &p("--level-scale=-1")]).code, 2);
    assert_eq!(run(&[&p("frobnicate")]).code, 2);
}

#[test]
fn ppm_survives_a_null_model_apply_byte_for_byte() {
    // gray pixels convert exactly enough that the null model reproduces them
    let dir = tempfile::tempdir().unwrap();
    let img = PlanarImage::new(ColorSpace::Rgb, [(); 3].map(|_| Plane::from_fn(16, 16, |x, y| ((x * 16 + y) % 256) as f64))).unwrap();
    let bytes = encode_ppm(&img);
    let input = write(dir.path(), "g.ppm", &bytes);
    let sc = write(dir.path(), "m.nrg", &encode_sidecar(&NoiseModel::NULL).unwrap());
    let out = dir.path().join("o.ppm");
    assert_eq!(run(&[&p("apply"), &input, &sc, &out]).code, 0);
    assert_eq!(fs::read(&out).unwrap(), bytes);
}

#[test]
fn grayscale_png_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut bytes, 32, 32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let data: Vec<u8> = (0..32 * 32).map(|i| (i % 251) as u8).collect();
        enc.write_header().unwrap().write_image_data(&data).unwrap();
    }
    let input = write(dir.path(), "g.png", &bytes);
    let r = run(&[&p("estimate"), &input, &dir.path().join("g.nrg")]);
    assert_eq!(r.code, 0, "{}", r.stderr);
}

#[test]
fn estimate_matches_in_memory_fit_within_one_step() {
    let dir = tempfile::tempdir().unwrap();
    let img = noisy(128, 96, 5);
    let input = write(dir.path(), "n.ppm", &encode_ppm(&img));
    let sc = dir.path().join("n.nrg");
    let report = dir.path().join("n.txt");
    let survey = dir.path().join("n.survey");
    let r = run(&[&p("estimate"), &input, &sc, &p("--report"), &report, &p("--survey"), &survey]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.is_empty());

    let rep = estimate_model(&img, &OpsinConstants::default(), &EstimateConfig::default()).unwrap();
    assert!(rep.fallback.is_none(), "{:?}", rep.fallback);
    let m = decode_sidecar(&fs::read(&sc).unwrap()).unwrap();
    assert!((m.alpha - rep.model.alpha).abs() <= step(ALPHA_RANGE));
    assert!((m.beta - rep.model.beta).abs() <= step(BETA_RANGE));
    assert!((m.gamma - rep.model.gamma).abs() <= step(GAMMA_RANGE));

    let text = fs::read_to_string(&report).unwrap();
    assert_eq!(text, rep.to_text());
    assert_eq!(kv(&text, "sample_count") as usize, rep.samples.len());
    let table = text.lines().skip_while(|l| !l.starts_with('#')).skip(1).count();
    assert_eq!(table, rep.sample_count);

    let dump = fs::read_to_string(&survey).unwrap();
    assert_eq!(dump.lines().filter(|l| !l.contains('=') && !l.starts_with('#')).count(), rep.patch_count);
    let selected = dump.lines().filter(|l| l.ends_with("\t1")).count();
    assert_eq!(selected, rep.selected_count);
}

#[test]
fn roundtrip_restores_noise_energy() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "n.ppm", &encode_ppm(&noisy(128, 128, 6)));
    let out = dir.path().join("r.ppm");
    let r = run(&[&p("roundtrip"), &input, &out]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let (inp, blur, rest) = (kv(&r.stdout, "input_energy"), kv(&r.stdout, "blurred_energy"), kv(&r.stdout, "restored_energy"));
    assert!(blur < 0.5 * inp, "{}", r.stdout);
    assert!(rest > blur, "{}", r.stdout);
    assert!(decode_image(&fs::read(&out).unwrap()).is_ok());
}

#[test]
fn unblurred_roundtrip_energies_roughly_add() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "n.ppm", &encode_ppm(&noisy(128, 128, 7)));
    let r = run(&[&p("roundtrip"), &input, &dir.path().join("r.ppm"), &p("--blur-sigma"), &p("0")]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let (inp, rest, synth) = (kv(&r.stdout, "input_energy"), kv(&r.stdout, "restored_energy"), kv(&r.stdout, "synthesized_energy"));
    assert_eq!(inp, kv(&r.stdout, "blurred_energy"));
    let sum = inp + synth;
    assert!((rest - sum).abs() <= 0.3 * sum, "{}", r.stdout);
}

#[test]
fn roundtrip_propagates_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let tiny = write(dir.path(), "t.ppm", &encode_ppm(&gray(10, 10, 9.0)));
    assert_eq!(run(&[&p("roundtrip"), &tiny, &dir.path().join("o.ppm")]).code, 3);
    let junk = write(dir.path(), "j.ppm", b"P6\n4 4\n255\n");
    assert_eq!(run(&[&p("roundtrip"), &junk, &dir.path().join("o.ppm")]).code, 2);
}

#[test]
fn sidecar_round_trip_over_random_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let m = NoiseModel::new(rng.random_range(0.0..=4.0), rng.random_range(0.0..=1.0), rng.random_range(-8.0..=8.0));
        let back = decode_sidecar(&encode_sidecar(&m).unwrap()).unwrap();
        assert!((back.alpha - m.alpha).abs() <= step(ALPHA_RANGE));
        assert!((back.beta - m.beta).abs() <= step(BETA_RANGE));
        assert!((back.gamma - m.gamma).abs() <= step(GAMMA_RANGE));
    }
}
