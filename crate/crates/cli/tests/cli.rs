use std::io::Write;
use std::process::{Command, Output};

use cavity_leak_cli::config::Task;
use cavity_leak_cli::{parse_config, run};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cavity-leak")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn value(text: &str, key: &str) -> f64 {
    let prefix = format!("{key} = ");
    text.lines()
        .find_map(|l| l.strip_prefix(&prefix))
        .unwrap_or_else(|| panic!("{key} missing in {text}"))
        .parse()
        .unwrap()
}

#[test]
fn uncoupled_composite_emits_nothing() {
    let o = cli(&["mode=composite", "g_c=0"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(value(&text, "I_kappa_closed"), 0.0);
    assert_eq!(value(&text, "I_kappa_moment"), 0.0);
}

#[test]
fn resonant_fixture_agrees_in_regime() {
    let o = cli(&["mode=composite"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let closed = value(&text, "I_kappa_closed");
    let moment = value(&text, "I_kappa_moment");
    assert!((closed - 5.0e-6).abs() < 1e-9);
    assert!((closed - moment).abs() / moment < 1e-2);
    assert!(value(&text, "rel_dev") < 1e-2);
    assert!(text.contains("regime_pass = true"));
    assert!(stderr(&o).is_empty());
}

#[test]
fn regime_failure_is_warned() {
    let o = cli(&["mode=composite", "kappa=100"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("regime_pass = false"));
    assert!(stderr(&o).contains("warning: outside the small-rate regime"));
}

#[test]
fn single_mode_output() {
    let o = cli(&["mode=single", "gamma_a=2", "gamma_b=1", "gamma_c=1", "omega=10"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!((value(&text, "I_gamma") - (4.0 - 2.0 / 401.0)).abs() < 1e-10);
    assert_eq!(value(&text, "mu1"), 1.0);

    let o = cli(&["mode=single", "gamma_a=1", "gamma_b=0", "gamma_c=3", "omega=0"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("I_gamma is negative"));
}

#[test]
fn exit_codes() {
    let o = cli(&["mode=single", "gamma_b=1", "omega=10"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("gamma_a: required for mode=single"));

    let o = cli(&["mode=composite", "bogus=1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bogus: unknown key"));

    assert_eq!(cli(&["--no-such-flag"]).status.code(), Some(1));
    assert_eq!(cli(&["--workers", "0", "mode=composite"]).status.code(), Some(1));

    let o = cli(&["mode=single", "gamma_a=1", "gamma_b=2", "omega=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gamma_b"));
}

#[test]
fn config_file_and_overrides() {
    let mut file = tempfile::NamedTempFile::new().unwrap();
    writeln!(file, "# resonant point\nmode=composite\nN=100\ng_c=0.3\nkappa=oops").unwrap();
    let path = file.path().to_str().unwrap();
    let o = cli(&["--config", path]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 5: kappa"), "{}", stderr(&o));

    let o = cli(&["--config", path, "kappa=0.1", "g_c=0"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(value(&stdout(&o), "I_kappa_closed"), 0.0);
}

#[test]
fn output_path() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("rate.txt");
    let arg = format!("output={}", target.display());
    let o = cli(&["mode=composite", &arg]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).is_empty());
    assert!(std::fs::read_to_string(&target).unwrap().contains("I_kappa_closed"));
}

#[test]
fn sweep_csv_is_deterministic_and_ordered() {
    let args = ["mode=sweep", "sweep=N:1e2:1e6:41:log"];
    let one = cli(&["--workers", "1", args[0], args[1]]);
    let four = cli(&["--workers", "4", args[0], args[1]]);
    assert_eq!(one.status.code(), Some(0));
    assert_eq!(one.stdout, four.stdout);
    assert_eq!(one.stdout, cli(&args).stdout);

    let text = stdout(&one);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "N,omega_c,omega_0,kappa,Gamma,g_c,I_kappa_closed,I_kappa_moment,rel_dev,regime_ratio,regime_pass"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 41);
    assert!(!text.contains('\r'));
    let n: Vec<u64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    for (k, &nk) in n.iter().enumerate() {
        assert_eq!(nk, 10f64.powf(2.0 + 4.0 * k as f64 / 40.0).round() as u64);
    }
    let closed: Vec<f64> = rows.iter().map(|r| r[6].parse().unwrap()).collect();
    assert!(closed.windows(2).all(|w| w[1] > w[0]));
    // twelve significant digits in scientific notation
    for field in &rows[0][1..10] {
        let mantissa = field.split('e').next().unwrap();
        assert_eq!(mantissa.trim_start_matches('-').len(), 13, "{field}");
    }
    assert_eq!(rows[0][10], "true");
    assert!(stderr(&one).contains("outside the small-rate regime"));
}

#[test]
fn integrate_time_series() {
    let o = cli(&["mode=integrate", "cutoff_cavity=4", "t_final=0.2", "samples=4"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,mu1,mu2,eta1,eta2,eta3,eta4,xi1,xi2,xi3,xi4");
    assert_eq!(lines.len(), 6);
    let first: Vec<f64> = lines[1].split(',').map(|x| x.parse().unwrap()).collect();
    assert!(first.iter().all(|&x| x == 0.0));
    let last: Vec<f64> = lines[5].split(',').map(|x| x.parse().unwrap()).collect();
    assert!((last[0] - 0.2).abs() < 1e-15);
    assert!(last[1] > 0.0);
}

#[test]
fn modes_file_sets_rates() {
    let mut file = tempfile::NamedTempFile::new().unwrap();
    // one resonant mode: A = Δt²/2, so γ_A = Δt
    writeln!(file, "# omega re_g im_g re_gt im_gt\n1.0 1.0 0.0 1.0 0.0").unwrap();
    let modes = format!("modes_file={}", file.path().display());
    let cfg = parse_config("mode=single\nomega=1\nbath_dt=0.01", &[modes.as_str()]).unwrap();
    let Task::Single(p) = cfg.task else { panic!() };
    assert!((p.gamma_a - 0.01).abs() < 1e-6);
    assert!(p.gamma_b >= 0.0 && p.gamma_b < p.gamma_a);

    let mut out = Vec::new();
    let mut err = Vec::new();
    run(&cfg, &mut out, &mut err).unwrap();
    assert!(String::from_utf8(out).unwrap().starts_with("I_gamma = "));

    assert!(parse_config("mode=single\nomega=1", &[modes.as_str()]).is_err());
    assert!(parse_config("mode=single\nomega=1\nbath_dt=0.1\ngamma_a=1", &[modes.as_str()]).is_err());
}

#[test]
fn validate_mode_passes() {
    let o = cli(&["mode=validate"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.lines().filter(|l| l.starts_with("PASS")).count() >= 9);
    assert!(!text.contains("FAIL"));
}
