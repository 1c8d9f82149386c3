// SPDX-License-Identifier: Apache-2.0
//! `LITHOKERN v1` kernel files.
//!
//! ```text
//! LITHOKERN v1
//! COUNT <n>
//! SIZE <h> <w>
//! VARIANT <nominal|defocus>
//! ALPHA <weight>        # then h*w lines of "<re> <im>", row-major
//! ...
//! ```

use litho_cfno::litho::{KernelVariant, LithoKernelSet};
use litho_cfno::Grid;
use num_complex::Complex64;

use crate::error::{IoError, Result};

pub fn serialize_kernels(k: &LithoKernelSet) -> String {
    let (h, w) = k.kernel_dims();
    let mut s = format!(
        "LITHOKERN v1\nCOUNT {}\nSIZE {h} {w}\nVARIANT {}\n",
        k.len(),
        k.variant().as_str()
    );
    for (kern, a) in k.kernels().iter().zip(k.coeffs()) {
        s += &format!("ALPHA {a}\n");
        for c in kern.as_slice() {
            s += &format!("{} {}\n", c.re, c.im);
        }
    }
    s
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Option<(usize, &'a str)> {
        self.inner.next().map(|(i, l)| (i + 1, l.trim()))
    }

    fn header(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (n, l) = self
            .next()
            .ok_or_else(|| IoError::Format(format!("truncated header: missing {key}")))?;
        let mut toks = l.split_whitespace();
        if toks.next() != Some(key) {
            return Err(IoError::syntax(n, format!("expected {key}")));
        }
        Ok((n, toks.collect()))
    }
}

fn num<T: std::str::FromStr>(line: usize, t: &str) -> Result<T> {
    t.parse()
        .map_err(|_| IoError::syntax(line, format!("bad number `{t}`")))
}

pub fn parse_kernels(text: &str) -> Result<LithoKernelSet> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
    };
    match lines.next() {
        Some((_, "LITHOKERN v1")) => {}
        Some((n, other)) => {
            return Err(IoError::syntax(
                n,
                format!("expected `LITHOKERN v1`, found `{other}`"),
            ))
        }
        None => return Err(IoError::Format("empty kernel file".into())),
    }
    let (n, v) = lines.header("COUNT")?;
    let count: usize = match v.as_slice() {
        [c] => num(n, c)?,
        _ => return Err(IoError::syntax(n, "COUNT takes one integer")),
    };
    let (n, v) = lines.header("SIZE")?;
    let (h, w): (usize, usize) = match v.as_slice() {
        [a, b] => (num(n, a)?, num(n, b)?),
        _ => return Err(IoError::syntax(n, "SIZE takes two integers")),
    };
    let (n, v) = lines.header("VARIANT")?;
    let variant: KernelVariant = match v.as_slice() {
        [name] => name
            .parse()
            .map_err(|e: litho_cfno::Error| IoError::syntax(n, e.to_string()))?,
        _ => return Err(IoError::syntax(n, "VARIANT takes one name")),
    };
    let mut kernels = Vec::with_capacity(count);
    let mut coeffs = Vec::with_capacity(count);
    for index in 0..count {
        let missing = || IoError::Kernel {
            index,
            msg: format!("file ends before kernel {index} of COUNT {count} is complete"),
        };
        let (n, l) = lines.next().ok_or_else(missing)?;
        let alpha = match l.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["ALPHA", a] => num::<f64>(n, a)?,
            _ => {
                return Err(IoError::Kernel {
                    index,
                    msg: format!("line {n}: expected `ALPHA <weight>`"),
                })
            }
        };
        let mut vals = Vec::with_capacity(h * w);
        for _ in 0..h * w {
            let (n, l) = lines.next().ok_or_else(missing)?;
            match l.split_whitespace().collect::<Vec<_>>().as_slice() {
                [re, im] => vals.push(Complex64::new(num(n, re)?, num(n, im)?)),
                _ => {
                    return Err(IoError::Kernel {
                        index,
                        msg: format!("line {n}: expected `<re> <im>`"),
                    })
                }
            }
        }
        coeffs.push(alpha);
        kernels.push(Grid::from_vec(h, w, vals)?);
    }
    while let Some((n, l)) = lines.next() {
        if !l.is_empty() {
            return Err(IoError::Kernel {
                index: count,
                msg: format!("line {n}: data after the {count} kernels declared by COUNT"),
            });
        }
    }
    Ok(LithoKernelSet::new(kernels, coeffs, variant)?)
}

pub fn load_kernels(path: &std::path::Path) -> Result<LithoKernelSet> {
    parse_kernels(&crate::error::read_to_string(path)?)
}

pub fn save_kernels(path: &std::path::Path, k: &LithoKernelSet) -> Result<()> {
    crate::error::write_bytes(path, serialize_kernels(k).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use litho_cfno::litho::SyntheticKernels;

    #[test]
    fn round_trip_is_bit_identical() {
        let k = SyntheticKernels {
            size: 7,
            count: 3,
            ..SyntheticKernels::default()
        }
        .defocus()
        .unwrap();
        let text = serialize_kernels(&k);
        let back = parse_kernels(&text).unwrap();
        assert_eq!(back, k);
        assert_eq!(serialize_kernels(&back), text);
    }

    #[test]
    fn truncation_is_an_error() {
        let k = SyntheticKernels {
            size: 5,
            count: 2,
            ..SyntheticKernels::default()
        }
        .nominal()
        .unwrap();
        let text = serialize_kernels(&k);
        let cut: String = text.lines().take(20).map(|l| format!("{l}\n")).collect();
        match parse_kernels(&cut) {
            Err(IoError::Kernel { index, .. }) => assert_eq!(index, 0),
            other => panic!("{other:?}"),
        }
        assert!(parse_kernels("LITHOKERN v1\nCOUNT 1\n").is_err());
    }

    #[test]
    fn count_mismatch_names_the_kernel() {
        let k = SyntheticKernels {
            size: 5,
            count: 2,
            ..SyntheticKernels::default()
        }
        .nominal()
        .unwrap();
        let text = serialize_kernels(&k);
        let more = text.replacen("COUNT 2", "COUNT 3", 1);
        match parse_kernels(&more) {
            Err(IoError::Kernel { index, .. }) => assert_eq!(index, 2),
            other => panic!("{other:?}"),
        }
        let fewer = text.replacen("COUNT 2", "COUNT 1", 1);
        match parse_kernels(&fewer) {
            Err(IoError::Kernel { index, msg }) => {
                assert_eq!(index, 1);
                assert!(msg.contains("COUNT"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn header_errors() {
        assert!(matches!(
            parse_kernels("LITHOKERN v2\n"),
            Err(IoError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            parse_kernels("LITHOKERN v1\nCOUNT 1\nSIZE 1 1\nVARIANT blurry\n"),
            Err(IoError::Syntax { line: 4, .. })
        ));
    }
}
