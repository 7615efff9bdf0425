//! The float-format property table printed by `s2fp8 formats`, with every
//! cell as an exact power-of-two expression.

use s2fp8_core::formats::{FloatFormat, BF16, FP16, FP32, FP8};

pub const COLUMNS: [&str; 8] = [
    "Format",
    "Bits",
    "s/e/m",
    "Min subnormal",
    "Min normal",
    "Max normal",
    "Machine epsilon",
    "Range",
];

pub fn table_rows() -> Vec<[String; 8]> {
    [
        ("IEEE-FP32", FP32),
        ("IEEE-FP16", FP16),
        ("BF16", BF16),
        ("FP8", FP8),
    ]
    .into_iter()
    .map(|(name, fmt)| row(name, fmt))
    .collect()
}

fn row(name: &str, fmt: FloatFormat) -> [String; 8] {
    let p = fmt.properties();
    [
        name.to_string(),
        fmt.total_bits().to_string(),
        format!("1/{}/{}", fmt.exp_bits(), fmt.man_bits()),
        pow2_str(p.min_subnormal_exp),
        pow2_str(p.min_normal_exp),
        // (2 - 2^-m) * 2^bias written with the top exponent explicit.
        format!(
            "(1-2^{})*2^{}",
            -(fmt.man_bits() as i32) - 1,
            fmt.bias() + 1
        ),
        pow2_str(p.machine_epsilon_exp),
        pow2_str(p.range_log2),
    ]
}

fn pow2_str(e: i32) -> String {
    format!("2^{e}")
}

pub fn render() -> String {
    let rows = table_rows();
    let mut widths = COLUMNS.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    for (i, col) in COLUMNS.iter().enumerate() {
        out.push_str(&format!("{:<width$}  ", col, width = widths[i]));
    }
    out.push('\n');
    for row in &rows {
        for (i, cell) in row.iter().enumerate() {
            out.push_str(&format!("{:<width$}  ", cell, width = widths[i]));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fp8_row_cells() {
        let rows = table_rows();
        let fp8 = rows.iter().find(|r| r[0] == "FP8").unwrap();
        assert_eq!(fp8[1], "8");
        assert_eq!(fp8[2], "1/5/2");
        assert_eq!(fp8[3], "2^-16");
        assert_eq!(fp8[4], "2^-14");
        assert_eq!(fp8[5], "(1-2^-3)*2^16");
        assert_eq!(fp8[6], "2^-3");
        assert_eq!(fp8[7], "2^32");
    }

    #[test]
    fn wider_format_cells() {
        let rows = table_rows();
        let fp16 = rows.iter().find(|r| r[0] == "IEEE-FP16").unwrap();
        assert_eq!(fp16[6], "2^-11");
        assert_eq!(fp16[7], "2^40");
        let bf16 = rows.iter().find(|r| r[0] == "BF16").unwrap();
        assert_eq!(bf16[4], "2^-126");
        assert_eq!(bf16[3], "2^-133");
        let fp32 = rows.iter().find(|r| r[0] == "IEEE-FP32").unwrap();
        assert_eq!(fp32[3], "2^-149");
        assert_eq!(fp32[6], "2^-24");
        assert_eq!(fp32[7], "2^277");
    }
}
