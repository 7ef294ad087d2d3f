use dynfx::design::{
    assemble_model, build_counterfactual_design, build_design, build_unit_specific_design, validate_identifiability,
    ArCoefficients, Diagnostic, GroupFactor, ModelFormula, PanelDataset, ParamDefaults, Treatment,
};
use dynfx::ssm::filter;
use nalgebra::DMatrix;

fn full_formula() -> ModelFormula {
    ModelFormula::parse("x_pre + z + x_pre*T + T:g").unwrap()
}

fn names(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("u{i}")).collect()
}

fn one_unit(t: f64) -> PanelDataset {
    PanelDataset::new(names(1), vec![1], DMatrix::from_element(1, 1, 0.0), Treatment::PerUnit(vec![t]))
        .unwrap()
        .with_x_pre(vec![0.5])
        .unwrap()
        .with_z(DMatrix::from_element(1, 1, 0.2))
        .unwrap()
        .with_g(GroupFactor::binary(&[1]).unwrap())
        .unwrap()
}

#[test]
fn full_row_in_canonical_order() {
    let f = build_design(&one_unit(1.0), &full_formula(), 0).unwrap();
    assert_eq!(f.as_slice(), &[1.0, 0.5, 0.2, 1.0, 0.5, 1.0]);
    let c = build_design(&one_unit(0.0), &full_formula(), 0).unwrap();
    assert_eq!(c.as_slice(), &[1.0, 0.5, 0.2, 0.0, 0.0, 0.0]);
    let cf = build_counterfactual_design(&one_unit(1.0), &full_formula(), 0).unwrap();
    assert_eq!(cf, c);
}

#[test]
fn minimal_two_unit_layout() {
    let ds = PanelDataset::new(names(2), vec![1], DMatrix::zeros(1, 2), Treatment::PerUnit(vec![1.0, 0.0])).unwrap();
    let f = build_design(&ds, &ModelFormula::parse("T").unwrap(), 0).unwrap();
    assert_eq!(f, DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 0.0]));
}

#[test]
fn counterfactual_of_all_control_is_all_treated() {
    let control = PanelDataset::new(names(3), vec![1], DMatrix::zeros(1, 3), Treatment::PerUnit(vec![0.0; 3]))
        .unwrap()
        .with_x_pre(vec![0.1, 0.2, 0.3])
        .unwrap();
    let treated = PanelDataset { treatment: Treatment::PerUnit(vec![1.0; 3]), ..control.clone() };
    let f = ModelFormula::parse("x_pre*T").unwrap();
    assert_eq!(build_counterfactual_design(&control, &f, 0).unwrap(), build_design(&treated, &f, 0).unwrap());
    let flipped_twice = PanelDataset { treatment: control.treatment.flipped().flipped(), ..control.clone() };
    assert_eq!(build_design(&flipped_twice, &f, 0).unwrap(), build_design(&control, &f, 0).unwrap());
}

#[test]
fn dose_counterfactual_rejected() {
    let ds = PanelDataset::new(names(2), vec![1], DMatrix::zeros(1, 2), Treatment::PerUnit(vec![0.5, 0.0])).unwrap();
    assert!(build_counterfactual_design(&ds, &ModelFormula::parse("T").unwrap(), 0).is_err());
}

#[test]
fn unit_specific_block_layout() {
    let t = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    let ds = PanelDataset::new(names(2), vec![1], DMatrix::zeros(1, 2), Treatment::PerTime(t))
        .unwrap()
        .with_x_pre(vec![1.0, 2.0])
        .unwrap()
        .with_z(DMatrix::from_row_slice(1, 2, &[3.0, 4.0]))
        .unwrap()
        .with_g(GroupFactor::binary(&[0, 1]).unwrap())
        .unwrap();
    let f = build_unit_specific_design(&ds, &ModelFormula::parse("-1 + x_pre + z + x_pre*T + T:g").unwrap(), 0).unwrap();
    let expected = DMatrix::from_row_slice(2, 7, &[1.0, 0.0, 3.0, 0.0, 1.0, 1.0, 0.0, 0.0, 2.0, 0.0, 4.0, 0.0, 0.0, 0.0]);
    assert_eq!(f, expected);

    let single = PanelDataset::new(names(1), vec![1], DMatrix::zeros(1, 1), Treatment::PerUnit(vec![1.0]))
        .unwrap()
        .with_x_pre(vec![1.5])
        .unwrap()
        .with_z(DMatrix::from_element(1, 1, 2.5))
        .unwrap();
    let f1 = build_unit_specific_design(&single, &ModelFormula::parse("-1 + x_pre + z + T").unwrap(), 0).unwrap();
    assert_eq!(f1.as_slice(), &[1.5, 2.5, 1.0]);
}

#[test]
fn missing_covariate_names_unit_and_time() {
    let mut z = DMatrix::from_element(2, 2, 1.0);
    z[(1, 0)] = f64::NAN;
    let ds = PanelDataset::new(names(2), vec![10, 11], DMatrix::zeros(2, 2), Treatment::PerUnit(vec![1.0, 0.0]))
        .unwrap()
        .with_z(z)
        .unwrap();
    let err = build_design(&ds, &ModelFormula::parse("z + T").unwrap(), 1).unwrap_err().to_string();
    assert!(err.contains("u0") && err.contains("11"), "{err}");
}

#[test]
fn identifiability_diagnostics() {
    let f = ModelFormula::parse("T").unwrap();
    let all = PanelDataset::new(names(3), vec![1], DMatrix::zeros(1, 3), Treatment::PerUnit(vec![1.0; 3])).unwrap();
    let diag = validate_identifiability(&all, &f).unwrap_err();
    assert_eq!(diag, Diagnostic::NoControlUnits);
    assert_eq!(diag.to_string(), "no control units");
    let mixed = PanelDataset { treatment: Treatment::PerUnit(vec![1.0, 0.0, 0.0]), ..all.clone() };
    assert!(validate_identifiability(&mixed, &f).is_ok());

    let tv = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
    let panel = PanelDataset::new(names(2), vec![1, 2], DMatrix::zeros(2, 2), Treatment::PerTime(tv)).unwrap();
    assert!(matches!(validate_identifiability(&panel, &f), Err(Diagnostic::TimeVaryingTreatment { .. })));
    let us = ModelFormula { unit_specific: true, ..f.clone() };
    assert!(validate_identifiability(&panel, &us).is_ok());
    let no_pre = PanelDataset { treatment: Treatment::PerTime(DMatrix::from_element(2, 2, 1.0)), ..panel };
    assert_eq!(validate_identifiability(&no_pre, &us), Err(Diagnostic::NoPrePeriod));
}

fn panel(n: usize, d: usize) -> PanelDataset {
    let t: Vec<f64> = (0..d).map(|i| (i % 2) as f64).collect();
    let y = DMatrix::from_fn(n, d, |r, c| ((r * 7 + c * 3) % 5) as f64 * 0.3 + t[c]);
    PanelDataset::new(names(d), (0..n as i64).collect(), y, Treatment::PerUnit(t))
        .unwrap()
        .with_x_pre((0..d).map(|i| i as f64 / d as f64).collect())
        .unwrap()
        .with_z(DMatrix::from_fn(n, d, |r, c| ((r + c) % 3) as f64))
        .unwrap()
        .with_g(GroupFactor::binary(&(0..d).map(|i| (i / 2 % 2) as u8).collect::<Vec<_>>()).unwrap())
        .unwrap()
}

#[test]
fn assembled_full_model_has_ar_block() {
    let ds = panel(6, 8);
    let a = assemble_model(&ds, &full_formula(), &ParamDefaults::default()).unwrap();
    assert_eq!(a.layout.state_dim(), 6);
    let names = a.spec.names();
    assert_eq!(names[0], "sigma2");
    assert_eq!(names.iter().filter(|n| n.starts_with("w[")).count(), 6);
    let mut psi = a.spec.initial();
    let c_pos: Vec<usize> = names.iter().enumerate().filter(|(_, n)| n.starts_with("c[")).map(|(i, _)| i).collect();
    assert_eq!(c_pos.len(), 3);
    for (k, &i) in c_pos.iter().enumerate() {
        psi[i] = 0.5 + 0.1 * k as f64;
    }
    let model = a.model_at(&psi).unwrap();
    let g = model.transition_at(0).unwrap();
    assert_eq!(g.diagonal().as_slice(), &[1.0, 1.0, 1.0, 0.5, 0.6, 0.7]);
    assert!(filter(&model, &a.observations).is_ok());
}

#[test]
fn toy_formula_is_random_walk_pair() {
    let ds = panel(2, 4);
    let f = ModelFormula { ar: ArCoefficients::Fixed(1.0), ..ModelFormula::parse("T").unwrap() };
    let a = assemble_model(&ds, &f, &ParamDefaults::default()).unwrap();
    assert_eq!(a.layout.state_dim(), 2);
    assert_eq!(a.model.transition_at(0).unwrap(), &DMatrix::identity(2, 2));
    assert_eq!(a.spec.names(), vec!["sigma2", "w[intercept]", "w[T]"]);
}

#[test]
fn unit_specific_state_count() {
    let mut ds = panel(4, 3);
    let mut tv = DMatrix::zeros(4, 3);
    tv[(3, 0)] = 1.0;
    ds.treatment = Treatment::PerTime(tv);
    let f = ModelFormula { unit_specific: true, ..ModelFormula::parse("-1 + x_pre + z + x_pre*T + T:g").unwrap() };
    let a = assemble_model(&ds, &f, &ParamDefaults::default()).unwrap();
    assert_eq!(a.layout.state_dim(), 9);
    assert_eq!(a.spec.names().iter().filter(|n| n.starts_with("sigma2")).count(), 3);
}

#[test]
fn no_treatment_formula_has_no_treatment_states() {
    let ds = panel(5, 4);
    let a = assemble_model(&ds, &ModelFormula::parse("z").unwrap(), &ParamDefaults::default()).unwrap();
    assert!(a.layout.treatment_terms.is_empty());
    assert!(a.spec.names().iter().all(|n| !n.starts_with("c[")));
    assert!(filter(&a.model, &a.observations).is_ok());
}

#[test]
fn weights_scale_noise() {
    let ds = panel(3, 4).with_weights(vec![1.0, 2.0, 4.0, 0.5]).unwrap();
    let a = assemble_model(&ds, &ModelFormula::parse("T").unwrap(), &ParamDefaults { obs_var: Some(2.0), state_var: None }).unwrap();
    let v = a.model.effective_obs_cov();
    assert_eq!(v.diagonal().as_slice(), &[2.0, 1.0, 0.5, 4.0]);
}

#[test]
fn shared_and_counterfactual_differ_only_in_treatment_columns() {
    let ds = panel(3, 6);
    let f = full_formula();
    for t in 0..3 {
        let a = build_design(&ds, &f, t).unwrap();
        let b = build_counterfactual_design(&ds, &f, t).unwrap();
        assert_eq!(a.columns(0, 3), b.columns(0, 3));
    }
}
