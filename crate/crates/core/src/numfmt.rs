//! Decimal rendering with a fixed number of significant digits.
//!
//! Output files use plain decimal notation with 9 significant digits. The
//! digits come from Rust's correctly rounded `{:e}` formatting, so the text is
//! identical on every platform for identical `f64` inputs.

/// `x` with 9 significant digits in plain decimal, trailing zeros trimmed.
pub fn sig9(x: f64) -> String {
    significant(x, 9)
}

pub fn significant(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    let (sign, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => ("-", m),
        None => ("", mantissa),
    };
    let mut ds: String = mantissa.chars().filter(|c| *c != '.').collect();
    let point = exp + 1;
    let mut out = String::from(sign);
    if point <= 0 {
        out.push_str("0.");
        out.extend(std::iter::repeat_n('0', (-point) as usize));
        out.push_str(&ds);
    } else if point as usize >= ds.len() {
        ds.extend(std::iter::repeat_n('0', point as usize - ds.len()));
        out.push_str(&ds);
        return out;
    } else {
        out.push_str(&ds[..point as usize]);
        out.push('.');
        out.push_str(&ds[point as usize..]);
    }
    while out.ends_with('0') {
        out.pop();
    }
    if out.ends_with('.') {
        out.pop();
    }
    out
}
