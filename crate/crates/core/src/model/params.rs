use std::io::{BufRead, Write};

use rand::Rng;
use sha2::{Digest, Sha256};

use super::{ModelError, ModelSpec};
use crate::seed::rng_from_seed;

const PARAMS_MAGIC: &str = "fedhorizon-params";
const PARAMS_VERSION: &str = "v1";

/// Flat, finite parameter vector θ of a classifier head.
///
/// See [`ModelSpec`] for the block layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    /// Wraps `values`, rejecting NaN and infinities.
    pub fn new(values: Vec<f64>) -> Result<Self, ModelError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite(i));
        }
        Ok(ParameterVector(values))
    }

    pub fn zeros(len: usize) -> Self {
        ParameterVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn squared_norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    /// Little-endian IEEE-754 bytes of every coordinate, in order.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.0.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    /// SHA-256 of [`Self::to_le_bytes`], lowercase hex.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_le_bytes()))
    }

    /// Writes the canonical text form: a header line and one hex-float per line.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{PARAMS_MAGIC} {PARAMS_VERSION} {}", self.0.len())?;
        for v in &self.0 {
            writeln!(w, "{}", format_hex_f64(*v))?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("ascii output")
    }

    /// Reads the text form. Values may be hex-floats or decimal literals.
    pub fn read_from<R: BufRead>(r: R) -> Result<Self, ModelError> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| ModelError::ParamFormat("missing header".into()))?
            .map_err(|e| ModelError::ParamFormat(e.to_string()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let count = match fields.as_slice() {
            [PARAMS_MAGIC, PARAMS_VERSION, n] => n
                .parse::<usize>()
                .map_err(|_| ModelError::ParamFormat(format!("bad count {n:?}")))?,
            _ => return Err(ModelError::ParamFormat(format!("bad header {header:?}"))),
        };
        let mut values = Vec::with_capacity(count);
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| ModelError::ParamFormat(e.to_string()))?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            let v = parse_f64(t).ok_or_else(|| {
                ModelError::ParamFormat(format!("line {}: bad value {t:?}", lineno + 2))
            })?;
            values.push(v);
        }
        if values.len() != count {
            return Err(ModelError::ParamFormat(format!(
                "header declares {count} values, found {}",
                values.len()
            )));
        }
        ParameterVector::new(values)
    }

    pub fn from_text(s: &str) -> Result<Self, ModelError> {
        Self::read_from(s.as_bytes())
    }
}

impl AsRef<[f64]> for ParameterVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Scaled-uniform (Glorot) initialization with zero biases.
///
/// Draws come from ChaCha8 seeded with `seed`, in layout order: every layer-1
/// weight from `U(-b1, b1)` with `b1 = √(6/(d+h))`, then every layer-2 weight
/// from `U(-b2, b2)` with `b2 = √(6/(h+K))`.
pub fn init_parameters(spec: &ModelSpec, seed: u64) -> ParameterVector {
    let (d, h, k) = (spec.input_dim, spec.hidden_dim, spec.num_classes);
    let lay = spec.layout();
    let mut rng = rng_from_seed(seed);
    let mut values = vec![0.0; lay.end];
    let bound1 = (6.0 / (d + h) as f64).sqrt();
    for v in &mut values[lay.w1..lay.b1] {
        *v = rng.random_range(-bound1..bound1);
    }
    let bound2 = (6.0 / (h + k) as f64).sqrt();
    for v in &mut values[lay.w2..lay.b2] {
        *v = rng.random_range(-bound2..bound2);
    }
    ParameterVector(values)
}

/// C99-style hex-float rendering (`0x1.8p+1`), exact for every finite `f64`.
pub fn format_hex_f64(x: f64) -> String {
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let biased = ((bits >> 52) & 0x7ff) as i64;
    let mantissa = bits & ((1u64 << 52) - 1);
    if biased == 0 && mantissa == 0 {
        return format!("{sign}0x0p+0");
    }
    if biased == 0x7ff {
        // not representable in the parameter format; callers keep vectors finite
        return if mantissa == 0 { format!("{sign}inf") } else { "nan".to_string() };
    }
    let (lead, exp) = if biased == 0 { (0, -1022) } else { (1, biased - 1023) };
    let digits = format!("{mantissa:013x}");
    let digits = digits.trim_end_matches('0');
    if digits.is_empty() {
        format!("{sign}0x{lead}p{exp:+}")
    } else {
        format!("{sign}0x{lead}.{digits}p{exp:+}")
    }
}

/// Parses a hex-float (`[-]0x<hex>[.<hex>]p<exp>`) or a decimal literal.
pub fn parse_f64(s: &str) -> Option<f64> {
    let s = s.trim();
    let (neg, body) = match s.as_bytes().first() {
        Some(b'-') => (true, &s[1..]),
        Some(b'+') => (false, &s[1..]),
        _ => (false, s),
    };
    let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) else {
        return s.parse::<f64>().ok().filter(|v| v.is_finite());
    };
    let (mant_part, exp_part) = hex.split_once(['p', 'P'])?;
    let exp: i64 = exp_part.parse().ok()?;
    let (int_digits, frac_digits) = mant_part.split_once('.').unwrap_or((mant_part, ""));
    if int_digits.is_empty() && frac_digits.is_empty() {
        return None;
    }
    let all = int_digits.trim_start_matches('0').len() + frac_digits.len();
    if all > 14 {
        return None;
    }
    let mut mant: u64 = 0;
    for c in int_digits.chars().chain(frac_digits.chars()) {
        mant = (mant << 4) | c.to_digit(16)? as u64;
    }
    if mant >= 1u64 << 53 {
        return None;
    }
    let scale = exp - 4 * frac_digits.len() as i64;
    let value = mant as f64 * pow2(scale)?;
    let value = if neg { -value } else { value };
    value.is_finite().then_some(value)
}

fn pow2(k: i64) -> Option<f64> {
    match k {
        -1022..=1023 => Some(f64::from_bits(((k + 1023) as u64) << 52)),
        -1074..=-1023 => Some(f64::from_bits(1u64 << (k + 1074))),
        _ => None,
    }
}
