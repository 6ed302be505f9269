//! Reader for the matrix subset of the MATPOWER case format emitted by pglib-opf.

use std::collections::HashMap;

use super::{
    validate, Bus, BusKind, CaseError, GenCost, Generator, Line, Network,
    DEFAULT_ANGLE_LIMIT_DEG,
};

const BUS_COLS: usize = 13;
const GEN_COLS: usize = 10;
const BRANCH_COLS: usize = 11;
const GENCOST_COLS: usize = 4;

type Matrix = Vec<Vec<f64>>;

/// Parses MATPOWER case text into a validated per-unit [`Network`].
///
/// Out-of-service generators and branches are dropped. A zero `RATE_A` means
/// the line has no flow limit. Angle-difference limits recorded as 0 or
/// beyond ±360° fall back to ±30°.
pub fn parse_matpower(text: &str) -> Result<Network, CaseError> {
    let blocks = scan_assignments(text)?;
    let base_mva = match blocks.get("baseMVA") {
        Some(Value::Scalar(v)) => *v,
        Some(Value::Matrix(m)) if m.len() == 1 && m[0].len() == 1 => m[0][0],
        _ => return Err(malformed("missing mpc.baseMVA")),
    };
    let bus = matrix(&blocks, "bus", BUS_COLS)?;
    let gen = matrix(&blocks, "gen", GEN_COLS)?;
    let branch = matrix(&blocks, "branch", BRANCH_COLS)?;
    let gencost = matrix(&blocks, "gencost", GENCOST_COLS)?;
    if gencost.len() < gen.len() {
        return Err(malformed(&format!(
            "gencost has {} rows for {} generators",
            gencost.len(),
            gen.len()
        )));
    }

    let mut index = HashMap::new();
    let mut buses = Vec::with_capacity(bus.len());
    let mut slack = None;
    for (row, r) in bus.iter().enumerate() {
        let id = as_id(r[0], "bus", row)?;
        if index.insert(id, row).is_some() {
            return Err(malformed(&format!("duplicate bus id {id}")));
        }
        let kind = match r[1] as i64 {
            3 => {
                if slack.replace(row).is_some() {
                    return Err(malformed("more than one reference bus"));
                }
                BusKind::Slack
            }
            1 | 2 => BusKind::Pq,
            t => return Err(malformed(&format!("bus {id}: unsupported bus type {t}"))),
        };
        buses.push(Bus {
            id,
            kind,
            p_load: r[2] / base_mva,
            q_load: r[3] / base_mva,
            g_shunt: r[4] / base_mva,
            b_shunt: r[5] / base_mva,
            v_max: r[11],
            v_min: r[12],
        });
    }
    let slack = slack.ok_or(CaseError::NoSlackBus)?;

    let mut generators = Vec::with_capacity(gen.len());
    for (row, r) in gen.iter().enumerate() {
        if r[7] <= 0.0 {
            continue;
        }
        let id = as_id(r[0], "generator", row)?;
        let bus = *index.get(&id).ok_or(CaseError::DanglingReference {
            kind: "generator",
            index: row,
            bus: id,
        })?;
        generators.push(Generator {
            bus,
            p_min: r[9] / base_mva,
            p_max: r[8] / base_mva,
            q_min: r[4] / base_mva,
            q_max: r[3] / base_mva,
            v_set: r[5],
            cost: parse_cost(&gencost[row], row)?,
        });
    }
    for g in &generators {
        if buses[g.bus].kind == BusKind::Pq {
            buses[g.bus].kind = BusKind::Pv;
        }
    }

    let default_angle = DEFAULT_ANGLE_LIMIT_DEG.to_radians();
    let mut lines = Vec::with_capacity(branch.len());
    for (row, r) in branch.iter().enumerate() {
        if r[10] <= 0.0 {
            continue;
        }
        let endpoint = |col: usize| -> Result<usize, CaseError> {
            let id = as_id(r[col], "line", row)?;
            index.get(&id).copied().ok_or(CaseError::DanglingReference {
                kind: "line",
                index: row,
                bus: id,
            })
        };
        let from = endpoint(0)?;
        let to = endpoint(1)?;
        let (ang_min, ang_max) = if r.len() >= 13 {
            (r[11], r[12])
        } else {
            (0.0, 0.0)
        };
        let unbounded = ang_min == 0.0 && ang_max == 0.0;
        let angle_min = if unbounded || ang_min <= -360.0 {
            -default_angle
        } else {
            ang_min.to_radians()
        };
        let angle_max = if unbounded || ang_max >= 360.0 {
            default_angle
        } else {
            ang_max.to_radians()
        };
        lines.push(Line {
            from,
            to,
            r: r[2],
            x: r[3],
            charging: r[4],
            tap: if r[8] == 0.0 { 1.0 } else { r[8] },
            shift: r[9].to_radians(),
            s_max: (r[5] != 0.0).then(|| r[5] / base_mva),
            angle_min,
            angle_max,
        });
    }

    let net = Network {
        base_mva,
        buses,
        lines,
        generators,
        slack,
    };
    validate(&net)?;
    Ok(net)
}

fn parse_cost(r: &[f64], row: usize) -> Result<GenCost, CaseError> {
    let unsupported = |reason: String| CaseError::UnsupportedCost { row, reason };
    if r[0] as i64 != 2 {
        return Err(unsupported(format!("cost model {} (only polynomial is supported)", r[0])));
    }
    let n = r[3];
    if n < 0.0 || n.fract() != 0.0 {
        return Err(unsupported(format!("invalid coefficient count {n}")));
    }
    let n = n as usize;
    if r.len() < GENCOST_COLS + n {
        return Err(malformed(&format!("gencost row {row} is missing coefficients")));
    }
    // Highest degree first.
    let coeffs = &r[GENCOST_COLS..GENCOST_COLS + n];
    let degree_of = |k: usize| n - 1 - k;
    if coeffs
        .iter()
        .enumerate()
        .any(|(k, &c)| degree_of(k) > 2 && c != 0.0)
    {
        return Err(unsupported(format!("polynomial of degree {}", n - 1)));
    }
    let coef = |deg: usize| if deg < n { coeffs[n - 1 - deg] } else { 0.0 };
    Ok(GenCost {
        c2: coef(2),
        c1: coef(1),
        c0: coef(0),
    })
}

fn as_id(v: f64, what: &str, row: usize) -> Result<u32, CaseError> {
    if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as u32)
    } else {
        Err(malformed(&format!("{what} row {row}: invalid bus number {v}")))
    }
}

fn malformed(msg: &str) -> CaseError {
    CaseError::MalformedCase(msg.to_string())
}

fn matrix(blocks: &HashMap<String, Value>, name: &str, min_cols: usize) -> Result<Matrix, CaseError> {
    match blocks.get(name) {
        Some(Value::Matrix(m)) => {
            if let Some(r) = m.iter().position(|r| r.len() < min_cols) {
                return Err(malformed(&format!(
                    "mpc.{name} row {r} has {} columns, need {min_cols}",
                    m[r].len()
                )));
            }
            Ok(m.clone())
        }
        Some(_) => Err(malformed(&format!("mpc.{name} is not a matrix"))),
        None => Err(malformed(&format!("missing mpc.{name}"))),
    }
}

enum Value {
    Scalar(f64),
    Matrix(Matrix),
    Other,
}

/// Collects `mpc.<name> = ...;` assignments. Cell arrays, strings and
/// anything else that is not numeric are recorded as `Other`.
fn scan_assignments(text: &str) -> Result<HashMap<String, Value>, CaseError> {
    let clean: String = text
        .lines()
        .map(strip_comment)
        .collect::<Vec<_>>()
        .join("\n");
    let mut out = HashMap::new();
    let mut rest = clean.as_str();
    while let Some(pos) = rest.find("mpc.") {
        rest = &rest[pos + 4..];
        let name_len = rest
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(rest.len());
        let name = rest[..name_len].to_string();
        let after = rest[name_len..].trim_start();
        let Some(after) = after.strip_prefix('=') else {
            continue;
        };
        let after = after.trim_start();
        if let Some(body) = after.strip_prefix('[') {
            let end = body
                .find(']')
                .ok_or_else(|| malformed(&format!("mpc.{name}: unterminated matrix")))?;
            out.insert(name.clone(), Value::Matrix(parse_rows(&body[..end], &name)?));
            rest = &body[end + 1..];
        } else if let Some(body) = after.strip_prefix('{') {
            let end = body
                .find('}')
                .ok_or_else(|| malformed(&format!("mpc.{name}: unterminated cell array")))?;
            out.insert(name, Value::Other);
            rest = &body[end + 1..];
        } else {
            let end = after.find([';', '\n']).unwrap_or(after.len());
            let token = after[..end].trim();
            let value = token.parse::<f64>().map(Value::Scalar).unwrap_or(Value::Other);
            out.insert(name, value);
            rest = &after[end..];
        }
    }
    Ok(out)
}

fn strip_comment(line: &str) -> &str {
    // `%` inside a quoted string does not start a comment.
    let mut quoted = false;
    for (i, c) in line.char_indices() {
        match c {
            '\'' => quoted = !quoted,
            '%' if !quoted => return &line[..i],
            _ => {}
        }
    }
    line
}

fn parse_rows(body: &str, name: &str) -> Result<Matrix, CaseError> {
    let mut rows: Matrix = Vec::new();
    for raw in body.split([';', '\n']) {
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let row = raw
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| malformed(&format!("mpc.{name}: bad number {t:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        // cost rows legitimately differ in length with their polynomial degree
        if let Some(first) = rows.first().filter(|_| name != "gencost") {
            if first.len() != row.len() {
                return Err(malformed(&format!(
                    "mpc.{name}: ragged row {} ({} columns, expected {})",
                    rows.len(),
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = r#"
function mpc = tiny
%% comment line
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
	1	3	0	0	0	0	1	1	0	230	1	1.1	0.9;
	2	1	50	10	0	5	1	1	0	230	1	1.1	0.9; % trailing
	3	2	0	0	0	0	1	1	0	230	1	1.1	0.9;
];
mpc.gen = [
	1	0	0	100	-100	1.0	100	1	200	10	0	0	0	0	0	0	0	0	0	0	0;
	3	0	0	50	-50	1.0	100	1	80	0	0	0	0	0	0	0	0	0	0	0	0;
	3	0	0	50	-50	1.0	100	0	80	0	0	0	0	0	0	0	0	0	0	0	0;
];
mpc.branch = [
	1	2	0.01	0.1	0.02	150	0	0	0	0	1	-360	360;
	2	3	0.01	0.1	0.02	0	0	0	1.05	3	1	-20	25;
	1	3	0.01	0.1	0.02	90	0	0	0	0	0	-360	360;
];
mpc.gencost = [
	2	0	0	3	0.02	20	5;
	2	0	0	2	30	0;
	2	0	0	3	1	1	1;
];
mpc.bus_name = {
	'one';
	'two % not a comment';
};
"#;

    #[test]
    fn reads_scalars_and_converts_to_per_unit() {
        let net = parse_matpower(TINY).unwrap();
        assert_eq!(net.base_mva, 100.0);
        assert_eq!(net.buses.len(), 3);
        assert_eq!(net.buses[1].p_load, 0.5);
        assert_eq!(net.buses[1].b_shunt, 0.05);
        assert_eq!(net.generators.len(), 2, "out-of-service generator dropped");
        assert_eq!(net.lines.len(), 2, "out-of-service branch dropped");
        assert_eq!(net.generators[0].p_max, 2.0);
        assert_eq!(net.generators[1].cost, GenCost { c2: 0.0, c1: 30.0, c0: 0.0 });
        assert_eq!(net.buses[2].kind, BusKind::Pv);
        assert_eq!(net.slack, 0);
    }

    #[test]
    fn zero_rating_means_unlimited_and_angle_defaults_apply() {
        let net = parse_matpower(TINY).unwrap();
        assert_eq!(net.lines[0].s_max, Some(1.5));
        assert_eq!(net.lines[1].s_max, None);
        assert!((net.lines[0].angle_max - 30f64.to_radians()).abs() < 1e-15);
        assert!((net.lines[0].angle_min + 30f64.to_radians()).abs() < 1e-15);
        assert!((net.lines[1].angle_min + 20f64.to_radians()).abs() < 1e-15);
        assert_eq!(net.lines[1].tap, 1.05);
        assert!((net.lines[1].shift - 3f64.to_radians()).abs() < 1e-15);
        assert_eq!(net.lines[0].tap, 1.0);
    }

    #[test]
    fn missing_block_is_malformed() {
        let text = TINY.replace("mpc.gencost", "mpc.othercost");
        assert!(matches!(parse_matpower(&text), Err(CaseError::MalformedCase(_))));
    }

    #[test]
    fn ragged_row_is_malformed() {
        let text = TINY.replace("3	2	0	0	0	0	1	1	0	230	1	1.1	0.9;", "3	2	0	0;");
        assert!(matches!(parse_matpower(&text), Err(CaseError::MalformedCase(_))));
    }

    #[test]
    fn cubic_and_piecewise_costs_are_rejected() {
        let cubic = TINY.replace("2	0	0	3	0.02	20	5;", "2	0	0	4	1	0.02	20	5;");
        assert!(matches!(
            parse_matpower(&cubic),
            Err(CaseError::UnsupportedCost { row: 0, .. })
        ));
        let pwl = TINY.replace("2	0	0	3	0.02	20	5;", "1	0	0	2	0	0	10	100;");
        assert!(matches!(
            parse_matpower(&pwl),
            Err(CaseError::UnsupportedCost { row: 0, .. })
        ));
    }

    #[test]
    fn no_reference_bus() {
        let text = TINY.replace("1	3	0	0	0	0	1	1	0	230	1	1.1	0.9;", "1	2	0	0	0	0	1	1	0	230	1	1.1	0.9;");
        assert_eq!(parse_matpower(&text), Err(CaseError::NoSlackBus));
    }

    #[test]
    fn unknown_bus_reference() {
        let text = TINY.replace("2	3	0.01", "2	9	0.01");
        assert!(matches!(
            parse_matpower(&text),
            Err(CaseError::DanglingReference { kind: "line", bus: 9, .. })
        ));
    }
}
