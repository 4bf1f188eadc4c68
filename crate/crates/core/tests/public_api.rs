use ldplab::action::{action, Path};
use ldplab::legendre::zero_cost_residual;
use ldplab::models::{bundled, sample_state, BUNDLED};
use ldplab::GeneratingHamiltonians;

#[test]
fn every_bundled_model_builds() {
    for name in BUNDLED {
        let m = bundled(name).unwrap();
        let ham = GeneratingHamiltonians::build(&m).unwrap();
        let x = sample_state(&m, &vec![0.5; m.dim()]);
        assert!(zero_cost_residual(&ham, &x).unwrap() <= 1e-10, "{name}");
    }
}

#[test]
fn constant_path_of_pure_birth_at_zero_is_free() {
    let ham = GeneratingHamiltonians::build(&bundled("yule").unwrap()).unwrap();
    let a = action(&ham, &Path::from_fn(1.0, 10, |_| vec![0.0])).unwrap();
    assert_eq!(a.total, 0.0);
}
