//! Drives the command-line front end in-process: generate network A, fit it
//! and build the coefficient table.

use odest::cli::main_with_args;

fn main() {
    let dir = std::env::temp_dir().join("odest_cli_example");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let d = |p: &str| dir.join(p).display().to_string();
    std::fs::write(
        d("a.toml"),
        "stations = 5\nobservations = 30\nmu_x = [500.0, 300.0, 200.0, 400.0, 250.0]\nphi = 10.0\nseed = 3\n",
    )
    .unwrap();
    let runs: Vec<Vec<String>> = vec![
        vec!["generate-a".into(), "--config".into(), d("a.toml"), "--out-dir".into(), d("data")],
        vec![
            "fit-ib".into(), "--x".into(), d("data/X.csv"), "--y".into(), d("data/Y.csv"),
            "--truth".into(), d("data/odmatrix.csv"), "--warmup".into(), "500".into(),
            "--out-dir".into(), d("fit"),
        ],
        vec!["fit-qp".into(), "--x".into(), d("data/X.csv"), "--y".into(), d("data/Y.csv"), "--out".into(), d("qp.json")],
        vec![
            "report".into(), "--kind".into(), "coefficients".into(), "--draws".into(), d("fit/draws"),
            "--truth".into(), d("data/odmatrix.csv"), "--qp".into(), d("qp.json"), "--out".into(), d("coef.csv"),
        ],
    ];
    for args in runs {
        let code = main_with_args(std::iter::once("odest".to_string()).chain(args.clone()));
        println!("{} -> exit {code}", args[0]);
    }
}
