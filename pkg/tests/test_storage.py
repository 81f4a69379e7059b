import datetime as dt
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tqe.errors import StorageError
from tqe.storage import (
    ColumnMeta, Table, decode_column, decode_table, encode_column, ingest_csv,
    load_catalog, make_table, parse_date_us, write_catalog,
)

US_PER_DAY = 86_400_000_000


def days_from_civil(y, m, d):
    # Howard Hinnant's days-from-civil, as an independent date oracle
    y -= m <= 2
    era = (y if y >= 0 else y - 399) // 400
    yoe = y - era * 400
    doy = (153 * (m + (-3 if m > 2 else 9)) + 2) // 5 + d - 1
    doe = yoe * 365 + yoe // 4 - yoe // 100 + doy
    return era * 146097 + doe - 719468


def test_string_encoding_pads_with_zeros():
    t = encode_column(["F"], ColumnMeta("s", "string", 3))
    assert t.dtype == "uint8"
    assert t.numpy().tolist() == [[70, 0, 0]]


def test_string_decoding():
    meta = ColumnMeta("s", "string", 3)
    assert decode_column(encode_column(["F"], meta), meta) == ["F"]


def test_epoch_and_known_date():
    assert encode_column(["1970-01-01"], ColumnMeta("d", "date")).to_list() == [0]
    want = days_from_civil(1993, 10, 1) * US_PER_DAY
    assert encode_column(["1993-10-01"], ColumnMeta("d", "date")).to_list() == [want]
    assert want == 749_433_600_000_000


def test_date_decodes_to_iso():
    meta = ColumnMeta("d", "date")
    assert decode_column(encode_column(["1970-01-01"], meta), meta) == ["1970-01-01T00:00:00"]


def test_dates_before_epoch_and_with_time():
    meta = ColumnMeta("d", "date")
    assert encode_column(["1969-12-31"], meta).to_list() == [-US_PER_DAY]
    assert encode_column(["1970-01-01T00:00:01.500000"], meta).to_list() == [1_500_000]


def test_empty_table_decodes_to_no_rows():
    t = make_table("e", [ColumnMeta("a", "int64")], {"a": []})
    assert decode_table(t) == []
    assert t.row_count == 0


def test_string_too_long():
    with pytest.raises(StorageError, match="string exceeds column width"):
        encode_column(["abcd"], ColumnMeta("s", "string", 3))


def test_interior_nul_rejected():
    with pytest.raises(StorageError, match="NUL"):
        encode_column(["a\x00b"], ColumnMeta("s", "string", 5))


def test_invalid_date():
    with pytest.raises(StorageError, match="invalid date"):
        encode_column(["1993-13-01"], ColumnMeta("d", "date"))


def test_max_len_auto():
    t = make_table("t", [ColumnMeta("s", "string")], {"s": ["a", "abcd", ""]})
    assert t.meta("s").max_len == 4
    assert t.column("s").shape == (3, 4)


def test_utf8_width_counts_bytes():
    t = encode_column(["ü"], ColumnMeta("s", "string"))
    assert t.cols == 2


def test_numeric_zero_copy_preserves_bits():
    a = np.array([0.1, -0.0, np.nan, 1e308])
    t = encode_column(a, ColumnMeta("x", "float64"))
    assert t.numpy()[:, 0].tobytes() == a.tobytes()


def test_table_row_count_mismatch():
    a = encode_column([1, 2], ColumnMeta("a", "int64"))
    b = encode_column([1], ColumnMeta("b", "int64"))
    with pytest.raises(StorageError):
        Table("t", ((ColumnMeta("a", "int64"), a), (ColumnMeta("b", "int64"), b)))


def test_unknown_type():
    with pytest.raises(StorageError):
        ColumnMeta("x", "decimal")


_TEXT = st.text(st.characters(blacklist_characters="\x00", blacklist_categories=("Cs",)), max_size=6)
_DATES = st.dates(dt.date(1900, 1, 1), dt.date(2100, 12, 31)).map(lambda d: d.isoformat())


@given(st.lists(st.tuples(st.integers(-2**31, 2**31 - 1), st.integers(-2**62, 2**62),
                          st.floats(allow_nan=False), _DATES, _TEXT), max_size=20))
def test_roundtrip_all_types(rows):
    schema = [ColumnMeta("i32", "int32"), ColumnMeta("i64", "int64"), ColumnMeta("f", "float64"),
              ColumnMeta("d", "date"), ColumnMeta("s", "string")]
    cols = {m.name: [r[i] for r in rows] for i, m in enumerate(schema)}
    t = make_table("t", schema, cols)
    back = decode_table(t)
    expect = [(a, b, c, d + "T00:00:00", e) for a, b, c, d, e in rows]
    assert back == expect


# -- CSV --------------------------------------------------------------------------

SCHEMA = [ColumnMeta("id", "int64"), ColumnMeta("name", "string", 0), ColumnMeta("price", "float64"),
          ColumnMeta("day", "date")]


@pytest.fixture
def csv_file(tmp_path):
    p = tmp_path / "items.csv"
    p.write_text('id,name,price,day\n1,"a, b",1.5,1994-01-01\n2,c,2.25,1994-01-02\n3,"""q""",0,1994-01-03\n')
    return p


def test_ingest_projected(csv_file):
    t = ingest_csv(csv_file, SCHEMA, projected=["price"])
    assert t.names == ["price"]
    assert t.row_count == 3


def test_ingest_quoted_fields(csv_file):
    t = ingest_csv(csv_file, SCHEMA)
    assert decode_column(t.column("name"), t.meta("name")) == ["a, b", "c", '"q"']
    assert t.meta("name").max_len == 4


def test_projected_equals_full_then_drop(csv_file):
    full = ingest_csv(csv_file, SCHEMA)
    part = ingest_csv(csv_file, SCHEMA, projected=["day", "id"])
    assert decode_table(part) == decode_table(full.select(["day", "id"]))


def test_ingest_missing_projected_column(csv_file):
    with pytest.raises(StorageError, match="not in schema"):
        ingest_csv(csv_file, SCHEMA, projected=["nope"])


def test_ingest_bad_cell_reports_position(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("id,name,price,day\n1,a,x,1994-01-01\n")
    with pytest.raises(StorageError, match=r"row 2, column 'price'"):
        ingest_csv(p, SCHEMA)


def test_ingest_empty_numeric_cell(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("id,name,price,day\n,a,1,1994-01-01\n")
    with pytest.raises(StorageError, match="empty cell"):
        ingest_csv(p, SCHEMA)


def test_ingest_missing_header_column(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("id,name\n1,a\n")
    with pytest.raises(StorageError, match="missing from header"):
        ingest_csv(p, SCHEMA, projected=["price"])


def test_catalog_roundtrip(tmp_path, csv_file):
    write_catalog(tmp_path, {"items": ("items.csv", SCHEMA)})
    doc = json.loads((tmp_path / "tables.json").read_text())
    assert doc["items"]["source"] == "items.csv"
    cat = load_catalog(tmp_path)
    assert [m.name for m in cat.schema("items")] == ["id", "name", "price", "day"]
    t = cat.sources["items"].load(["id"])
    assert t.column("id").to_list() == [1, 2, 3]


def test_catalog_missing_files(tmp_path):
    with pytest.raises(StorageError, match="tables.json"):
        load_catalog(tmp_path)
    write_catalog(tmp_path, {"items": ("gone.csv", SCHEMA)})
    with pytest.raises(StorageError, match="not found"):
        load_catalog(tmp_path)


def test_parse_date_accepts_date_objects():
    assert parse_date_us(dt.date(1970, 1, 2)) == US_PER_DAY
