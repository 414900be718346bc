import json
import os
import re
import stat
import sys

import pytest

from chemminer.docmodel import document_to_dict, dumps_document, page_text, validate_document
from chemminer.ingest import ConversionError, convert_pdf

pymupdf = pytest.importorskip("pymupdf", reason="PDF adapter tests need pymupdf")

ZERO_PAGE_PDF = (b"%PDF-1.4\n1 0 obj\n<</Type/Catalog/Pages 2 0 R>>\nendobj\n"
                 b"2 0 obj\n<</Type/Pages/Kids[]/Count 0>>\nendobj\ntrailer\n<</Root 1 0 R>>\n%%EOF\n")


def test_fixture_pdf_matches_golden(fixtures_dir):
    doc = convert_pdf((fixtures_dir / "sample.pdf").read_bytes(), "sample")
    assert validate_document(doc) == []
    assert dumps_document(doc) == (fixtures_dir / "sample.golden.json").read_text(encoding="utf-8")


def test_fixture_pdf_image_is_passed_through(fixtures_dir):
    raw = (fixtures_dir / "sample.pdf").read_bytes()
    # independent check: locate the DCT-encoded stream in the file by hand
    streams = re.findall(rb"/Filter\s*/DCTDecode[^>]*>>\s*stream\r?\n(.*?)\r?\nendstream", raw, re.S)
    assert len(streams) == 1
    doc = convert_pdf(raw, "sample")
    images = [i for p in doc.pages for i in p.embedded_images]
    assert len(images) == 1
    assert images[0].format_tag == "jpeg"
    assert images[0].data == streams[0]
    assert images[0].data[:2] == b"\xff\xd8"


def test_fixture_pdf_text_and_rules(fixtures_dir):
    doc = convert_pdf((fixtures_dir / "sample.pdf").read_bytes(), "sample")
    page = doc.pages[0]
    text = page_text(page)
    assert text.splitlines()[0] == "General Procedure"
    assert "4-methylbenzaldehyde (1b) was added in THF." in text
    assert len([s for s in page.vector_segments if s.is_horizontal()]) == 3
    assert len([s for s in page.vector_segments if s.is_vertical()]) == 3


def test_zero_page_pdf():
    with pytest.raises(ConversionError, match="no pages"):
        convert_pdf(ZERO_PAGE_PDF)


def test_encrypted_pdf():
    d = pymupdf.open()
    d.new_page()
    data = d.tobytes(encryption=pymupdf.PDF_ENCRYPT_AES_256, owner_pw="o", user_pw="u")
    with pytest.raises(ConversionError, match="encrypted"):
        convert_pdf(data)


@pytest.mark.parametrize("data", [b"not a pdf", b"%PDF-1.4 garbage"])
def test_unreadable_pdf(data):
    with pytest.raises(ConversionError):
        convert_pdf(data)


def test_external_decoder(tmp_path, fixtures_dir, monkeypatch):
    golden = fixtures_dir / "sample.golden.json"
    script = tmp_path / "decoder"
    script.write_text(f"#!{sys.executable}\nimport shutil, sys\n"
                      f"shutil.copy({str(fixtures_dir / 'p0_x18_0.jpeg')!r}, 'p0_x18_0.jpeg')\n"
                      f"sys.stdout.write(open({str(golden)!r}).read())\n")
    script.chmod(script.stat().st_mode | stat.S_IEXEC)
    monkeypatch.setenv("CHEMMINER_DECODER", str(script))
    doc = convert_pdf(b"%PDF-1.4 anything", "sample")
    assert document_to_dict(doc) == json.loads(golden.read_text())
    assert doc.pages[0].embedded_images[0].data == (fixtures_dir / "p0_x18_0.jpeg").read_bytes()


def test_failing_external_decoder(tmp_path):
    script = tmp_path / "broken"
    script.write_text(f"#!{sys.executable}\nimport sys\nsys.stderr.write('boom')\nsys.exit(3)\n")
    script.chmod(0o755)
    with pytest.raises(ConversionError, match="boom"):
        convert_pdf(b"%PDF-1.4", "x", decoder=str(script))
    assert os.environ.get("CHEMMINER_DECODER") is None
