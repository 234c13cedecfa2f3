//! CSV text. Numbers carry 17 significant digits so values round-trip exactly.

pub fn csv_header<S: AsRef<str>>(cols: &[S]) -> String {
    let mut s = cols.iter().map(|c| c.as_ref()).collect::<Vec<_>>().join(",");
    s.push('\n');
    s
}

pub fn number(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn csv_row(values: &[f64]) -> String {
    let mut s = values.iter().map(|v| number(*v)).collect::<Vec<_>>().join(",");
    s.push('\n');
    s
}
