//! Property tests for the compositional transforms and the survey schema.

use proptest::prelude::*;

use geochem::compositional::{
    clr_transform, helmert_basis, ilr_transform, CompositionMatrix, TransformSpace,
};
use geochem::geodata::{parse_survey_reader, write_survey_writer, Survey};

fn composition_rows() -> impl Strategy<Value = Vec<Vec<f64>>> {
    // Positive parts spanning several orders of magnitude.
    (2usize..7, 1usize..6).prop_flat_map(|(cols, rows)| {
        proptest::collection::vec(
            proptest::collection::vec(1e-4f64..1e4, cols),
            rows..=rows,
        )
    })
}

fn matrix_from(rows: &[Vec<f64>]) -> CompositionMatrix {
    let n = rows.len();
    let c = rows[0].len();
    let data = nalgebra::DMatrix::from_fn(n, c, |i, j| rows[i][j]);
    CompositionMatrix::new(
        data,
        TransformSpace::Raw,
        (0..c).map(|j| format!("E{j}")).collect(),
        (0..n).map(|i| format!("S{i}")).collect(),
    )
    .unwrap()
}

proptest! {
    #[test]
    fn clr_rows_sum_to_zero(rows in composition_rows()) {
        let m = matrix_from(&rows);
        let t = clr_transform(&m).unwrap();
        for i in 0..t.n_rows() {
            let s: f64 = t.row_vec(i).iter().sum();
            prop_assert!(s.abs() < 1e-9, "row {i} sums to {s}");
        }
    }

    #[test]
    fn clr_is_scale_invariant(rows in composition_rows(), lambda in 1e-3f64..1e3) {
        let m = matrix_from(&rows);
        let scaled_rows: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.iter().map(|v| v * lambda).collect())
            .collect();
        let ms = matrix_from(&scaled_rows);
        let a = clr_transform(&m).unwrap();
        let b = clr_transform(&ms).unwrap();
        for i in 0..a.n_rows() {
            for j in 0..a.n_cols() {
                prop_assert!((a.value(i, j) - b.value(i, j)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ilr_is_an_isometry_of_clr(rows in composition_rows()) {
        prop_assume!(rows.len() >= 2);
        let m = matrix_from(&rows);
        let clr = clr_transform(&m).unwrap();
        let ilr = ilr_transform(&m).unwrap();
        let dist = |t: &CompositionMatrix, a: usize, b: usize| -> f64 {
            t.row_vec(a)
                .iter()
                .zip(t.row_vec(b))
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        };
        for a in 0..rows.len() {
            for b in a + 1..rows.len() {
                prop_assert!((dist(&clr, a, b) - dist(&ilr, a, b)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn helmert_gram_is_identity(c in 2usize..16) {
        let v = helmert_basis(c);
        let gram = v.transpose() * &v;
        for i in 0..c - 1 {
            for j in 0..c - 1 {
                let expect = if i == j { 1.0 } else { 0.0 };
                prop_assert!((gram[(i, j)] - expect).abs() < 1e-12);
            }
        }
    }
}

fn survey_strategy() -> impl Strategy<Value = Survey> {
    use geochem::geodata::{ConcentrationUnit, ElementDescriptor, Sample};
    (1usize..5, 1usize..6).prop_flat_map(|(c, n)| {
        let values = proptest::collection::vec(
            proptest::collection::vec(
                prop_oneof![
                    3 => (1e-3f64..1e5).prop_map(Some),
                    1 => Just(None),          // missing cell
                    1 => Just(Some(-9999.0)), // sentinel
                ],
                c,
            ),
            n..=n,
        );
        let coords = proptest::collection::vec((-180f64..180.0, -90f64..90.0), n..=n);
        (values, coords).prop_map(move |(vals, coords)| {
            let elements: Vec<ElementDescriptor> = (0..c)
                .map(|j| ElementDescriptor::new(&format!("X{j}"), ConcentrationUnit::Ppm))
                .collect();
            let samples = vals
                .into_iter()
                .zip(coords)
                .enumerate()
                .map(|(i, (row, (x, y)))| {
                    let missing: Vec<bool> = row.iter().map(|v| v.is_none()).collect();
                    let values: Vec<f64> = row.into_iter().map(|v| v.unwrap_or(0.0)).collect();
                    Sample {
                        id: format!("S{i}"),
                        sample_type: "t".to_string(),
                        position: [x, y],
                        values,
                        missing,
                    }
                })
                .collect();
            Survey {
                samples,
                elements,
                crs_tag: "GDA2020".to_string(),
            }
        })
    })
}

proptest! {
    #[test]
    fn survey_write_parse_round_trip(survey in survey_strategy()) {
        let mut buf = Vec::new();
        write_survey_writer(&mut buf, &survey).unwrap();
        let back = parse_survey_reader(std::io::Cursor::new(buf), None).unwrap();
        prop_assert_eq!(survey, back);
    }
}
