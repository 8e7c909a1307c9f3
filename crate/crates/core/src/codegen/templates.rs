//! Static text of the generated files. `{{name}}` placeholders are filled by
//! [`render`].

/// Replace every `{{key}}` in `template`. Unknown placeholders are a bug in
/// the caller and panic.
pub(crate) fn render(template: &str, vars: &[(&str, String)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let end = rest[start..].find("}}").expect("unterminated placeholder") + start;
        let key = &rest[start + 2..end];
        let value = vars
            .iter()
            .find(|(k, _)| *k == key)
            .unwrap_or_else(|| panic!("no value for placeholder `{key}`"));
        out.push_str(&value.1);
        rest = &rest[end + 2..];
    }
    out.push_str(rest);
    out
}

pub(crate) const NUMBER_H_FIXED: &str = r#"#ifndef NUMBER_H
#define NUMBER_H

#include <stdint.h>

#define FIXED_POINT 1
#define NUMBER_WIDTH {{width}}
#define NUMBER_MIN ({{min}})
#define NUMBER_MAX {{max}}
#define LONG_NUMBER_BITS {{long_bits}}
#define LONG_NUMBER_MAX {{long_max}}

typedef {{number_type}} number_t;
typedef {{long_type}} long_number_t;
typedef {{long_utype}} long_number_u;

/* Saturate to the NUMBER_WIDTH-bit range. */
static inline number_t clamp_to_number_t(long_number_t v) {
    if (v > NUMBER_MAX) return NUMBER_MAX;
    if (v < NUMBER_MIN) return NUMBER_MIN;
    return (number_t)v;
}

/* Two's-complement value of the bit pattern u. */
static inline long_number_t long_from_bits(long_number_u u) {
    if (u <= (long_number_u)LONG_NUMBER_MAX) return (long_number_t)u;
    return (long_number_t)(-(long_number_t)(long_number_u)~u - 1);
}

/* Wrapping addition in the long type. */
static inline long_number_t add_long(long_number_t a, long_number_t b) {
    return long_from_bits((long_number_u)((long_number_u)a + (long_number_u)b));
}

/* acc + a * b; the product of two numbers always fits the long type. */
static inline long_number_t mac_long(long_number_t acc, number_t a, number_t b) {
    return add_long(acc, (long_number_t)((long_number_t)a * (long_number_t)b));
}

/* floor(v / 2^s) for s >= 0. */
static inline long_number_t shift_right_floor(long_number_t v, int s) {
    if (s >= LONG_NUMBER_BITS) return (long_number_t)(v < 0 ? -1 : 0);
    if (v >= 0) return (long_number_t)(v >> s);
    return (long_number_t)~(~v >> s);
}

/* Move v by `shift` fractional bits (right when positive) and saturate. */
static inline number_t scale_number_t(long_number_t v, int shift) {
    if (shift >= 0) return clamp_to_number_t(shift_right_floor(v, shift));
    if (v == 0) return 0;
    if (-shift >= 32) return v > 0 ? NUMBER_MAX : NUMBER_MIN;
    {
        int64_t wide = (int64_t)v * ((int64_t)1 << -shift);
        if (wide > NUMBER_MAX) return NUMBER_MAX;
        if (wide < NUMBER_MIN) return NUMBER_MIN;
        return (number_t)wide;
    }
}

/* floor(v / d) for d > 0. */
static inline long_number_t floor_div_long(long_number_t v, long_number_t d) {
    long_number_t q = (long_number_t)(v / d);
    if (v % d != 0 && v < 0) q = (long_number_t)(q - 1);
    return q;
}

static inline number_t relu_number_t(number_t v) {
    return v > 0 ? v : 0;
}

#endif
"#;

pub(crate) const NUMBER_H_FLOAT: &str = r#"#ifndef NUMBER_H
#define NUMBER_H

#define FIXED_POINT 0

typedef {{float_type}} number_t;
typedef {{float_type}} long_number_t;

static inline number_t relu_number_t(number_t v) {
    return v > 0 ? v : 0;
}

#endif
"#;

pub(crate) const MODEL_H: &str = r#"#ifndef MODEL_H
#define MODEL_H

#include "number.h"

#define MODEL_INPUT_CHANNELS {{channels}}
#define MODEL_INPUT_SAMPLES {{samples}}
#define MODEL_OUTPUT_SAMPLES {{outputs}}
{{scale_factors}}
typedef number_t output_layer_type[MODEL_OUTPUT_SAMPLES];

void cnn(const number_t input[MODEL_INPUT_CHANNELS][MODEL_INPUT_SAMPLES], output_layer_type output);
{{helper}}
#endif
"#;

pub(crate) const HARNESS_MAIN_C: &str = r#"#include <stdio.h>
#include <string.h>

#include "model.h"

/* Reads MODEL_INPUT_CHANNELS * MODEL_INPUT_SAMPLES little-endian values per
   sample from stdin until EOF and prints each output element on its own line. */

#define ELEMENT_BYTES {{element_bytes}}

static number_t input[MODEL_INPUT_CHANNELS][MODEL_INPUT_SAMPLES];
static output_layer_type output;

static number_t decode(const unsigned char *b) {
{{decode}}
}

int main(void) {
    unsigned char buf[ELEMENT_BYTES];
    for (;;) {
        int c, s, i;
        for (c = 0; c < MODEL_INPUT_CHANNELS; c++) {
            for (s = 0; s < MODEL_INPUT_SAMPLES; s++) {
                if (fread(buf, 1, ELEMENT_BYTES, stdin) != ELEMENT_BYTES) return 0;
                input[c][s] = decode(buf);
            }
        }
        cnn((const number_t (*)[MODEL_INPUT_SAMPLES])input, output);
        for (i = 0; i < MODEL_OUTPUT_SAMPLES; i++) {
            printf({{print}});
        }
    }
}
"#;
