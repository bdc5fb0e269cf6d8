use std::cmp::Ordering;
use std::str::FromStr;

use chrono::NaiveDate;
use rust_decimal::Decimal;

use super::{ComputeValue, GateError, OperationKind};
use crate::model::{normalize, DateLocale, NumberLocale, PolicyConfig};

/// Parses an amount such as `$1,234.50` or `1.234,50 €` into an exact decimal.
pub fn parse_number(raw: &str, locale: NumberLocale) -> Result<Decimal, GateError> {
    let mut s: String = raw
        .chars()
        .filter(|c| !c.is_whitespace() && !matches!(c, '$' | '€' | '£' | '¥' | '\u{a0}'))
        .collect();
    for code in ["USD", "EUR", "GBP", "JPY", "CNY", "RMB"] {
        if let Some(rest) = s.strip_prefix(code).or_else(|| s.strip_suffix(code)) {
            s = rest.to_string();
        }
    }
    let s = match locale {
        NumberLocale::DotDecimal => s.replace(',', ""),
        NumberLocale::CommaDecimal => s.replace('.', "").replace(',', "."),
    };
    let err = || GateError::Operation("operand is not a number".into());
    if s.is_empty() || !s.chars().all(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+')) {
        return Err(err());
    }
    Decimal::from_str(&s).map_err(|_| err())
}

/// Parses ISO `YYYY-MM-DD`, or a slash date read by `locale`. A slash date
/// that is valid both ways is refused when no locale is set.
pub fn parse_date(raw: &str, locale: Option<DateLocale>) -> Result<NaiveDate, GateError> {
    let s = raw.trim();
    let err = |m: &str| GateError::Operation(m.to_string());
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(d);
    }
    let parts: Vec<&str> = s.split('/').collect();
    if parts.len() != 3 || parts.iter().any(|p| p.is_empty() || !p.chars().all(|c| c.is_ascii_digit())) || parts[2].len() != 4 {
        return Err(err("operand is not a date"));
    }
    let a: u32 = parts[0].parse().map_err(|_| err("operand is not a date"))?;
    let b: u32 = parts[1].parse().map_err(|_| err("operand is not a date"))?;
    let y: i32 = parts[2].parse().map_err(|_| err("operand is not a date"))?;
    let day_first = NaiveDate::from_ymd_opt(y, b, a);
    let month_first = NaiveDate::from_ymd_opt(y, a, b);
    match locale {
        Some(DateLocale::DayFirst) => day_first.ok_or_else(|| err("operand is not a date")),
        Some(DateLocale::MonthFirst) => month_first.ok_or_else(|| err("operand is not a date")),
        None => match (day_first, month_first) {
            (Some(d), Some(m)) if d == m => Ok(d),
            (Some(_), Some(_)) => Err(err("ambiguous date; configure a date locale")),
            (Some(d), None) | (None, Some(d)) => Ok(d),
            (None, None) => Err(err("operand is not a date")),
        },
    }
}

fn ordering_label(o: Ordering) -> ComputeValue {
    let label = match o {
        Ordering::Greater => "greater_than",
        Ordering::Less => "less_than",
        Ordering::Equal => "equal",
    };
    ComputeValue::Categorical { label: label.into() }
}

pub fn compare_numbers(a: &str, b: &str, locale: NumberLocale) -> Result<ComputeValue, GateError> {
    Ok(ordering_label(parse_number(a, locale)?.cmp(&parse_number(b, locale)?)))
}

pub fn compare_dates(a: &str, b: &str, locale: Option<DateLocale>) -> Result<ComputeValue, GateError> {
    Ok(ordering_label(parse_date(a, locale)?.cmp(&parse_date(b, locale)?)))
}

pub fn classify_length(raw: &str, short_max: usize, medium_max: usize) -> ComputeValue {
    let n = raw.trim().chars().count();
    let label = if n <= short_max {
        "short"
    } else if n <= medium_max {
        "medium"
    } else {
        "long"
    };
    ComputeValue::Categorical { label: label.into() }
}

pub(super) fn run(kind: OperationKind, raws: &[String], policy: &PolicyConfig) -> Result<ComputeValue, GateError> {
    match (kind, raws) {
        (OperationKind::NumericCompare, [a, b]) => compare_numbers(a, b, policy.number_locale),
        (OperationKind::DateCompare, [a, b]) => compare_dates(a, b, policy.date_locale),
        (OperationKind::Equality, [a, b]) => Ok(ComputeValue::Boolean { value: normalize(a) == normalize(b) }),
        (OperationKind::SubstringContains, [a, b]) => Ok(ComputeValue::Boolean {
            value: normalize(a).contains(&normalize(b)),
        }),
        (OperationKind::LengthClass, [a]) => Ok(classify_length(a, policy.short_max, policy.medium_max)),
        _ => Err(GateError::Operation(format!("{kind:?} cannot take {} operand(s)", raws.len()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers() {
        let dot = NumberLocale::DotDecimal;
        assert_eq!(parse_number("$1,234.50", dot).unwrap(), Decimal::from_str("1234.50").unwrap());
        assert_eq!(parse_number("1.234,50 €", NumberLocale::CommaDecimal).unwrap(), Decimal::from_str("1234.50").unwrap());
        assert_eq!(compare_numbers("120.50", "99.99", dot).unwrap().as_word(), "greater_than");
        assert_eq!(compare_numbers("0.1", "0.10", dot).unwrap().as_word(), "equal");
        assert!(parse_number("twelve", dot).is_err());
    }

    #[test]
    fn dates() {
        assert_eq!(compare_dates("2024-01-02", "2024-03-01", None).unwrap().as_word(), "less_than");
        assert!(parse_date("2024-13-45", None).is_err());
        assert!(parse_date("03/04/2024", None).is_err());
        assert_eq!(parse_date("03/04/2024", Some(DateLocale::DayFirst)).unwrap(), NaiveDate::from_ymd_opt(2024, 4, 3).unwrap());
        assert_eq!(parse_date("03/04/2024", Some(DateLocale::MonthFirst)).unwrap(), NaiveDate::from_ymd_opt(2024, 3, 4).unwrap());
        assert_eq!(parse_date("25/12/2024", None).unwrap(), NaiveDate::from_ymd_opt(2024, 12, 25).unwrap());
        assert_eq!(parse_date("05/05/2024", None).unwrap(), NaiveDate::from_ymd_opt(2024, 5, 5).unwrap());
    }

    #[test]
    fn lengths() {
        assert_eq!(classify_length("12345678", 8, 16).as_word(), "short");
        assert_eq!(classify_length("123456789", 8, 16).as_word(), "medium");
        assert_eq!(classify_length("12345678901234567", 8, 16).as_word(), "long");
    }
}
