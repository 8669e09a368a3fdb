//! Timestamp parsing and calendar helpers.
//!
//! All timestamps are normalized to UTC epoch seconds at load time. Inputs
//! may be integer epoch seconds or an ISO-8601 date/date-time, optionally
//! with a `Z` suffix or a numeric offset. No timezone database is involved:
//! offsets are applied arithmetically.

/// Days from 1970-01-01 to the given civil date (proleptic Gregorian).
fn days_from_civil(y: i64, m: u32, d: u32) -> i64 {
    let y = if m <= 2 { y - 1 } else { y };
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = y - era * 400; // [0, 399]
    let mp = (m as i64 + 9) % 12; // March = 0
    let doy = (153 * mp + 2) / 5 + d as i64 - 1; // [0, 365]
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe - 719_468
}

fn parse_fixed_u32(s: &str) -> Option<u32> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

/// Parses a timestamp cell into epoch seconds.
///
/// Accepted forms: a plain integer (epoch seconds), `YYYY-MM-DD`,
/// `YYYY-MM-DD[T ]HH:MM:SS` with optional fractional seconds (truncated)
/// and an optional `Z` or `+HH:MM`/`-HH:MM` offset.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if s.is_empty() {
        return None;
    }
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    // Date part.
    if s.len() < 10 {
        return None;
    }
    let (date, rest) = s.split_at(10);
    let mut dit = date.split('-');
    let y: i64 = dit.next()?.parse().ok()?;
    let m = parse_fixed_u32(dit.next()?)?;
    let d = parse_fixed_u32(dit.next()?)?;
    if dit.next().is_some() || !(1..=12).contains(&m) || !(1..=31).contains(&d) {
        return None;
    }
    let mut secs = days_from_civil(y, m, d) * 86_400;
    if rest.is_empty() {
        return Some(secs);
    }
    let rest = rest.strip_prefix('T').or_else(|| rest.strip_prefix(' '))?;
    if rest.len() < 8 {
        return None;
    }
    let (time, mut tail) = rest.split_at(8);
    let mut tit = time.split(':');
    let hh = parse_fixed_u32(tit.next()?)?;
    let mm = parse_fixed_u32(tit.next()?)?;
    let ss = parse_fixed_u32(tit.next()?)?;
    if tit.next().is_some() || hh > 23 || mm > 59 || ss > 60 {
        return None;
    }
    secs += (hh as i64) * 3600 + (mm as i64) * 60 + ss as i64;
    // Fractional seconds are truncated.
    if let Some(t) = tail.strip_prefix('.') {
        let n = t.bytes().take_while(|b| b.is_ascii_digit()).count();
        if n == 0 {
            return None;
        }
        tail = &t[n..];
    }
    match tail {
        "" | "Z" | "z" => Some(secs),
        _ => {
            let (sign, off) = match tail.as_bytes()[0] {
                b'+' => (1i64, &tail[1..]),
                b'-' => (-1i64, &tail[1..]),
                _ => return None,
            };
            let (oh, om) = match off.len() {
                5 if off.as_bytes()[2] == b':' => (&off[..2], &off[3..]),
                4 => (&off[..2], &off[2..]),
                _ => return None,
            };
            let oh = parse_fixed_u32(oh)? as i64;
            let om = parse_fixed_u32(om)? as i64;
            // A "+02:00" stamp is two hours ahead of UTC.
            Some(secs - sign * (oh * 3600 + om * 60))
        }
    }
}

/// UTC hour of day in `0..=23`.
pub fn hour_utc(epoch_secs: i64) -> i64 {
    epoch_secs.rem_euclid(86_400) / 3600
}

/// UTC day of week, `0` = Monday .. `6` = Sunday.
pub fn dayofweek_utc(epoch_secs: i64) -> i64 {
    let days = epoch_secs.div_euclid(86_400);
    (days + 3).rem_euclid(7) // 1970-01-01 was a Thursday
}
