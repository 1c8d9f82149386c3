// SPDX-License-Identifier: Apache-2.0
//! Plain-text rectangle lists:
//!
//! ```text
//! CANVAS <w_nm> <h_nm>
//! RECT <x> <y> <w> <h>
//! ```
//!
//! Lines starting with `#` and blank lines are ignored.

use litho_cfno::layout::{Rect, RectList};

use crate::error::{IoError, Result};

fn fields<const N: usize>(line: usize, rest: &[&str], what: &str) -> Result<[u64; N]> {
    if rest.len() != N {
        return Err(IoError::syntax(
            line,
            format!("{what} takes {N} integers, found {}", rest.len()),
        ));
    }
    let mut out = [0u64; N];
    for (o, tok) in out.iter_mut().zip(rest) {
        *o = tok
            .parse()
            .map_err(|_| IoError::syntax(line, format!("`{tok}` is not a non-negative integer")))?;
    }
    Ok(out)
}

pub fn parse_rectlist(text: &str) -> Result<RectList> {
    let mut list: Option<RectList> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = t.split_whitespace().collect();
        match (toks[0], list.as_mut()) {
            ("CANVAS", None) => {
                let [w, h] = fields::<2>(line, &toks[1..], "CANVAS")?;
                list = Some(RectList::new(w, h).map_err(|e| IoError::syntax(line, e.to_string()))?);
            }
            ("CANVAS", Some(_)) => return Err(IoError::syntax(line, "duplicate CANVAS line")),
            ("RECT", Some(l)) => {
                let [x, y, w, h] = fields::<4>(line, &toks[1..], "RECT")?;
                l.push(Rect::new(x, y, w, h))
                    .map_err(|e| IoError::syntax(line, e.to_string()))?;
            }
            ("RECT", None) => return Err(IoError::syntax(line, "RECT before CANVAS")),
            (other, _) => return Err(IoError::syntax(line, format!("unknown record `{other}`"))),
        }
    }
    list.ok_or_else(|| IoError::Format("missing CANVAS line".into()))
}

pub fn serialize_rectlist(list: &RectList) -> String {
    let mut s = format!("CANVAS {} {}\n", list.canvas_w_nm(), list.canvas_h_nm());
    for r in list.rects() {
        s += &format!("RECT {} {} {} {}\n", r.x, r.y, r.w, r.h);
    }
    s
}

pub fn load_rectlist(path: &std::path::Path) -> Result<RectList> {
    parse_rectlist(&crate::error::read_to_string(path)?)
}
