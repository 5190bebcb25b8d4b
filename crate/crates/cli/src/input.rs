//! Plain numeric CSV input for the fit commands.

#[derive(Debug)]
pub struct InputError(pub String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

/// Reads the first `N` comma-separated columns. Blank lines, `#` comments and
/// a single non-numeric header line are skipped.
pub fn columns<const N: usize>(text: &str) -> Result<[Vec<f64>; N], InputError> {
    let mut cols: [Vec<f64>; N] = std::array::from_fn(|_| Vec::new());
    let mut header_allowed = true;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() < N {
            return Err(InputError(format!("line {}: expected {N} columns, found {}", i + 1, cells.len())));
        }
        let parsed: Result<Vec<f64>, _> = cells[..N].iter().map(|c| c.parse::<f64>()).collect();
        match parsed {
            Ok(v) => {
                for (c, x) in cols.iter_mut().zip(v) {
                    c.push(x);
                }
                header_allowed = false;
            }
            Err(_) if header_allowed => header_allowed = false,
            Err(e) => return Err(InputError(format!("line {}: {e}", i + 1))),
        }
    }
    if cols[0].is_empty() {
        return Err(InputError("no data rows".into()));
    }
    Ok(cols)
}
