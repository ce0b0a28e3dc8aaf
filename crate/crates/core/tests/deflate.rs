use incomevis_core::deflate;
use incomevis_core::ingest::{self, SynthConfig};
use incomevis_core::YearRange;

fn fit(beta_rent_lead: f64, beta_rpp_lead: f64) -> incomevis_core::Result<deflate::BackcastModel> {
    let years = YearRange::default();
    let mut config = SynthConfig::demo(9, 5, years, 10);
    config.rpp_model.beta_rent_lead = beta_rent_lead;
    config.rpp_model.beta_rpp_lead = beta_rpp_lead;
    config.rpp_model.alpha = 60.0 * (1.0 - beta_rpp_lead);
    let data = ingest::generate_synthetic(&config)?;
    let set = deflate::build_deflators(&data.prices, years, true)?;
    let model = set.model.unwrap();
    assert!((model.beta_rent - config.rpp_model.beta_rent).abs() < 1e-8);
    Ok(model)
}

#[test]
fn zero_lead_terms_are_recovered_as_zero() {
    let m = fit(0.0, 0.5).unwrap();
    assert!(m.beta_rent_lead.abs() < 1e-8, "{}", m.beta_rent_lead);
    assert!((m.beta_rpp_lead - 0.5).abs() < 1e-8);

    let m = fit(0.004, 0.0).unwrap();
    assert!(m.beta_rpp_lead.abs() < 1e-8, "{}", m.beta_rpp_lead);
    assert!((m.beta_rent_lead - 0.004).abs() < 1e-8);
}

#[test]
fn both_lead_terms_zero_without_noise_is_rank_deficient() {
    // lead parity is then an exact combination of intercept, lead rent and state effects
    let err = fit(0.0, 0.0).unwrap_err();
    assert!(matches!(err, incomevis_core::Error::RankDeficient { .. }), "{err}");
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn noisy_panel_still_fits_closely() {
    let years = YearRange::default();
    let mut config = SynthConfig::demo(4, 8, years, 10);
    config.rpp_model.noise_sd = 0.3;
    let data = ingest::generate_synthetic(&config).unwrap();
    let set = deflate::build_deflators(&data.prices, years, true).unwrap();
    let model = set.model.unwrap();
    assert!(model.diagnostics.residual_sd > 0.0);
    assert!(model.diagnostics.r_squared > 0.9, "{:?}", model.diagnostics);
    // every state has a full 1976..2019 parity path
    assert_eq!(set.rpp.len(), 8 * 44);
}
