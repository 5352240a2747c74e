//! Parsers for the small string mini-grammars used by the flags.

use anyhow::{anyhow, bail, Result};
use sdridge_core::io::TargetColumn;
use sdridge_core::sim::{CovarianceKind, EntryDist, SignalDraw, SignalKind, SignalSpec};
use sdridge_core::smoother::Bandwidth;

/// `last`, a zero-based index, or a header name.
pub fn parse_target(spec: &str) -> TargetColumn {
    if spec.eq_ignore_ascii_case("last") {
        TargetColumn::Last
    } else if let Ok(i) = spec.parse::<usize>() {
        TargetColumn::Index(i)
    } else {
        TargetColumn::Name(spec.to_string())
    }
}

/// `isotropic`, `ar1:RHO`, or `spiked:STRENGTH:SEED`.
pub fn parse_cov(spec: &str) -> Result<CovarianceKind> {
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.as_slice() {
        ["isotropic"] => Ok(CovarianceKind::Isotropic),
        ["ar1", rho] => Ok(CovarianceKind::Ar1 { rho: rho.parse()? }),
        ["spiked", strength, seed] => Ok(CovarianceKind::Spiked {
            strength: strength.parse()?,
            spike_vector_seed: seed.parse()?,
        }),
        _ => bail!("cannot parse covariance spec {spec:?}; expected isotropic | ar1:RHO | spiked:STRENGTH:SEED"),
    }
}

/// `isotropic`, `top:PCT:FACTOR`, or `bottom:PCT:FACTOR`, with energy `r2`
/// and the draw mode attached.
pub fn parse_signal(spec: &str, r2: f64, draw: SignalDraw) -> Result<SignalSpec> {
    let parts: Vec<&str> = spec.split(':').collect();
    let kind = match parts.as_slice() {
        ["isotropic"] => SignalKind::Isotropic,
        ["top", pct, factor] => SignalKind::TopAligned {
            ratio_pct: pct.parse()?,
            factor: factor.parse()?,
        },
        ["bottom", pct, factor] => SignalKind::BottomAligned {
            ratio_pct: pct.parse()?,
            factor: factor.parse()?,
        },
        _ => bail!("cannot parse signal spec {spec:?}; expected isotropic | top:PCT:FACTOR | bottom:PCT:FACTOR"),
    };
    Ok(SignalSpec { kind, r2, draw })
}

pub fn parse_signal_draw(spec: &str) -> Result<SignalDraw> {
    match spec {
        "gaussian" => Ok(SignalDraw::Gaussian),
        "deterministic" => Ok(SignalDraw::Deterministic),
        _ => bail!("signal draw must be gaussian or deterministic, got {spec:?}"),
    }
}

pub fn parse_entry_dist(spec: &str) -> Result<EntryDist> {
    match spec {
        "gaussian" => Ok(EntryDist::Gaussian),
        "rademacher" => Ok(EntryDist::Rademacher),
        _ => bail!("entry distribution must be gaussian or rademacher, got {spec:?}"),
    }
}

/// `median` or a positive number.
pub fn parse_bandwidth(spec: &str) -> Result<Bandwidth> {
    if spec.eq_ignore_ascii_case("median") {
        Ok(Bandwidth::Median)
    } else {
        let v: f64 = spec
            .parse()
            .map_err(|_| anyhow!("bandwidth must be `median` or a number, got {spec:?}"))?;
        Ok(Bandwidth::Fixed(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_forms() {
        assert_eq!(parse_target("last"), TargetColumn::Last);
        assert_eq!(parse_target("3"), TargetColumn::Index(3));
        assert_eq!(parse_target("price"), TargetColumn::Name("price".into()));
    }

    #[test]
    fn cov_forms() {
        assert!(matches!(parse_cov("isotropic"), Ok(CovarianceKind::Isotropic)));
        assert!(matches!(parse_cov("ar1:0.25"), Ok(CovarianceKind::Ar1 { .. })));
        assert!(matches!(parse_cov("spiked:5:7"), Ok(CovarianceKind::Spiked { .. })));
        assert!(parse_cov("ar1").is_err());
    }

    #[test]
    fn signal_forms() {
        let s = parse_signal("top:10:0.9", 1.0, SignalDraw::Gaussian).unwrap();
        assert!(matches!(s.kind, SignalKind::TopAligned { .. }));
        assert!(parse_signal("sideways:1:2", 1.0, SignalDraw::Gaussian).is_err());
    }

    #[test]
    fn bandwidth_forms() {
        assert_eq!(parse_bandwidth("median").unwrap(), Bandwidth::Median);
        assert_eq!(parse_bandwidth("2.5").unwrap(), Bandwidth::Fixed(2.5));
        assert!(parse_bandwidth("wide").is_err());
    }
}
