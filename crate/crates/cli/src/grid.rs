//! Sweep-grid parsing: `"eta=0.01,0.1;alpha=1,3.3"` expands to the
//! Cartesian product of the named hyperparameter values.

use fedlab_core::config::FederationConfig;

/// One grid cell: `(key, value)` overrides in axis order.
pub type Cell = Vec<(String, f64)>;

const NUMERIC_KEYS: &[&str] = &["eta", "alpha", "beta1", "beta2", "epsilon", "mu"];
const INTEGER_KEYS: &[&str] = &[
    "rounds",
    "local_iters",
    "batch_size",
    "clients_per_round",
    "seed",
];

/// Parse a grid spec into the Cartesian product of its axes.
pub fn parse(spec: &str) -> Result<Vec<Cell>, String> {
    let mut axes: Vec<(String, Vec<f64>)> = Vec::new();
    for axis in spec.split(';').filter(|s| !s.trim().is_empty()) {
        let (key, values) = axis
            .split_once('=')
            .ok_or_else(|| format!("axis '{axis}' is not of the form key=v1,v2"))?;
        let key = key.trim().to_string();
        if !NUMERIC_KEYS.contains(&key.as_str()) && !INTEGER_KEYS.contains(&key.as_str()) {
            return Err(format!(
                "unknown grid key '{key}' (known: {})",
                NUMERIC_KEYS
                    .iter()
                    .chain(INTEGER_KEYS.iter())
                    .cloned()
                    .collect::<Vec<_>>()
                    .join(", ")
            ));
        }
        let parsed: Result<Vec<f64>, String> = values
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| format!("'{}' is not a number in axis '{key}'", v.trim()))
            })
            .collect();
        let parsed = parsed?;
        if parsed.is_empty() {
            return Err(format!("axis '{key}' has no values"));
        }
        axes.push((key, parsed));
    }
    if axes.is_empty() {
        return Err("empty grid".into());
    }
    let mut cells: Vec<Cell> = vec![Vec::new()];
    for (key, values) in &axes {
        let mut next = Vec::with_capacity(cells.len() * values.len());
        for cell in &cells {
            for v in values {
                let mut extended = cell.clone();
                extended.push((key.clone(), *v));
                next.push(extended);
            }
        }
        cells = next;
    }
    Ok(cells)
}

/// Apply one cell's overrides to a copy of the base config and
/// re-validate.
pub fn apply(base: &FederationConfig, cell: &Cell) -> Result<FederationConfig, String> {
    let mut config = base.clone();
    for (key, value) in cell {
        let as_integer = || -> Result<usize, String> {
            if value.fract() != 0.0 || *value < 0.0 {
                return Err(format!("{key} needs a non-negative integer, got {value}"));
            }
            Ok(*value as usize)
        };
        match key.as_str() {
            "eta" => config.eta = *value,
            "alpha" => config.alpha = *value,
            "beta1" => config.beta1 = *value,
            "beta2" => config.beta2 = *value,
            "epsilon" => config.epsilon = *value,
            "mu" => config.mu = *value,
            "rounds" => config.rounds = as_integer()?,
            "local_iters" => config.local_iters = as_integer()?,
            "batch_size" => config.batch_size = Some(as_integer()?),
            "clients_per_round" => config.clients_per_round = Some(as_integer()?),
            "seed" => config.seed = as_integer()? as u64,
            other => return Err(format!("unknown grid key '{other}'")),
        }
    }
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

/// Human/CSV-safe cell label, e.g. `eta=0.1;alpha=3.3`.
pub fn describe(cell: &Cell) -> String {
    cell.iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_grid() {
        let cells = parse("eta=0.01,0.1;alpha=1,2").unwrap();
        assert_eq!(cells.len(), 4);
        assert_eq!(describe(&cells[0]), "eta=0.01;alpha=1");
        assert_eq!(describe(&cells[3]), "eta=0.1;alpha=2");
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(parse("").is_err());
        assert!(parse(";;").is_err());
        assert!(parse("eta=").is_err());
        assert!(parse("eta=abc").is_err());
        assert!(parse("warp=1,2").is_err());
    }
}
