//! CSV emission. Every file has a header row and floats carry 17
//! significant digits, so identical inputs give identical bytes.

use std::fmt::Write as _;

/// Scientific notation with 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Header plus rows of floats.
pub fn numeric_csv(header: &str, rows: &[Vec<f64>]) -> String {
    let mut out = String::with_capacity(header.len() + 1 + rows.len() * 24 * 4);
    out.push_str(header);
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|&x| num(x)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Quotes a text cell when it holds a separator, quote or newline.
pub fn text_cell(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        let mut q = String::with_capacity(s.len() + 2);
        q.push('"');
        for ch in s.chars() {
            if ch == '"' {
                q.push('"');
            }
            q.push(if ch == '\n' { ' ' } else { ch });
        }
        q.push('"');
        q
    } else {
        s.to_string()
    }
}

pub fn text_csv(header: &str, rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{header}");
    for row in rows {
        let cells: Vec<String> = row.iter().map(|c| text_cell(c)).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, 10.450583572185565, -2.5e-300, 0.0] {
            let s = num(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
            let mantissa = s.trim_start_matches('-').split('e').next().unwrap();
            assert_eq!(mantissa.replace('.', "").len(), 17, "{s}");
        }
    }

    #[test]
    fn csv_shapes() {
        assert_eq!(numeric_csv("a,b", &[]), "a,b\n");
        let c = numeric_csv("a,b", &[vec![1.0, 2.0]]);
        assert_eq!(c.lines().count(), 2);
        assert_eq!(text_cell("x,y"), "\"x,y\"");
        assert_eq!(text_cell("say \"hi\""), "\"say \"\"hi\"\"\"");
        assert_eq!(text_csv("s,t", &[vec!["a".into(), "b,c".into()]]), "s,t\na,\"b,c\"\n");
    }
}
