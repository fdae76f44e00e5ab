// Welch two-sided t-test reference values, frozen from
// scipy.stats.ttest_ind(a, b, equal_var=False) (scipy 1.15.3).
// Columns: a, b, t statistic, p-value.
pub const TTEST_REFERENCE: [(&[f64], &[f64], f64, f64); 10] = [
    (
        &[1.0, 2.0, 3.0, 4.0, 5.0],
        &[2.0, 3.0, 4.0, 5.0, 6.0],
        -1.0,
        0.34659350708733416,
    ),
    (
        &[0.61, 0.64, 0.7, 0.66, 0.59],
        &[0.72, 0.75, 0.69, 0.78, 0.74],
        -3.932313218491401,
        0.004858385489128072,
    ),
    (&[0.5, 0.52], &[0.9, 0.1, 0.4], 0.1855439663661389, 0.8698599760262858),
    (
        &[10.0, 12.0, 9.5, 11.2, 10.8, 9.9],
        &[8.1, 7.9, 8.4],
        5.9328029290084965,
        0.0008990473599827355,
    ),
    (&[1.0, 1.1, 0.9, 1.05], &[1.0, 1.1, 0.9, 1.05], 0.0, 1.0),
    (
        &[3.3, 2.1, 4.8, 5.5, 1.2, 3.9, 4.4],
        &[2.2, 2.9, 3.1, 2.5, 2.8, 3.0, 2.7],
        1.4609542606730204,
        0.19063006915455138,
    ),
    (
        &[0.0, 1.0],
        &[100.0, 101.0, 99.5, 100.4],
        -168.41571200428675,
        6.432348531821933e-05,
    ),
    (
        &[0.81, 0.79, 0.84, 0.8, 0.83],
        &[0.77, 0.78, 0.74, 0.79, 0.76],
        3.6366193091936414,
        0.006684749151540445,
    ),
    (
        &[-1.5, -0.2, 0.3, 1.9, -0.8],
        &[0.1, 0.2, 0.15, 0.12, 0.18, 0.11],
        -0.3534916465714472,
        0.741536184610136,
    ),
    (
        &[5.0, 6.0, 7.0],
        &[5.5, 6.5, 7.5, 8.5, 9.5, 10.5, 11.5, 12.5],
        -2.8823067684915684,
        0.018886157219024063,
    ),
];
