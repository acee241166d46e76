use adares_harness::check::{run_gradcheck, CORRUPT_ENV, END_TO_END_TOL, OP_TOL};

/// One test body covers both the clean run and the corrupted negative
/// control: the hook reads a process-global env var, so the two runs must
/// not execute concurrently.
#[test]
fn every_op_and_the_full_pipeline_pass() {
    std::env::remove_var(CORRUPT_ENV);
    let report = run_gradcheck(0).unwrap();
    for op in &report.ops {
        assert!(
            op.pass,
            "{} exceeded tolerance: {} >= {}",
            op.name, op.max_rel_err, op.tol
        );
        assert_eq!(op.tol, OP_TOL);
    }
    assert!(
        report.end_to_end.pass,
        "end-to-end error {} >= {}",
        report.end_to_end.max_rel_err, END_TO_END_TOL
    );
    assert_eq!(report.end_to_end.params_checked, 295, "small scorer parameter count");
    assert!(report.pass());
    assert!(report.failures().is_empty());

    // Negative control: corrupting one op's analytic gradient must surface
    // as exactly that op failing.
    std::env::set_var(CORRUPT_ENV, "mul");
    let corrupted = run_gradcheck(0).unwrap();
    std::env::remove_var(CORRUPT_ENV);
    assert!(!corrupted.pass());
    assert_eq!(corrupted.failures(), vec!["mul".to_string()]);

    std::env::set_var(CORRUPT_ENV, "end_to_end");
    let corrupted = run_gradcheck(0).unwrap();
    std::env::remove_var(CORRUPT_ENV);
    assert!(!corrupted.pass());
    assert_eq!(corrupted.failures(), vec!["end_to_end".to_string()]);
}

#[test]
fn report_names_every_tape_op() {
    let report = run_gradcheck(1).unwrap();
    let names: Vec<&str> = report.ops.iter().map(|o| o.name.as_str()).collect();
    for expected in [
        "add",
        "sub",
        "mul",
        "div",
        "add_scalar",
        "mul_scalar",
        "pow_scalar",
        "sigmoid",
        "leaky_relu",
        "ln",
        "exp",
        "matmul",
        "conv1d_same",
        "batchnorm1d",
        "sum",
        "mean",
        "max",
        "sum_axis",
        "mean_axis",
        "max_axis",
        "cumsum",
        "concat",
        "slice",
        "transpose2",
        "max_scalar",
        "reshape",
        "row_fill_normalize",
    ] {
        assert!(names.contains(&expected), "missing op check: {expected}");
    }
}
