"""Minimal ELF reader: dynamic symbols and needed-library entries.

Reads just enough of the standard object format to know what a binary
imports, what it exports, and which libraries it declares a dependency
on: the section header table, ``.dynsym`` with its string table, and the
``DT_NEEDED`` entries of ``.dynamic``.  Both ELF classes and byte orders
are handled; anything structurally inconsistent raises
:class:`MalformedSymbolTable` rather than being guessed at.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from ..errors import MalformedSymbolTable, NotAnObjectFile

_MAGIC = b"\x7fELF"

_SHT_DYNSYM = 11
_SHT_DYNAMIC = 6
_SHT_STRTAB = 3

_DT_NEEDED = 1
_DT_SONAME = 14

_SHN_UNDEF = 0

_STB_GLOBAL = 1
_STB_WEAK = 2

_ET_NAMES = {1: "ET_REL", 2: "ET_EXEC", 3: "ET_DYN", 4: "ET_CORE"}


@dataclass
class ObjectInfo:
    """Dynamic-linking facts read from one object file."""

    path: str
    elf_class: int  # 32 or 64
    little_endian: bool
    object_type: str  # ET_EXEC / ET_DYN
    imports: tuple[str, ...]  # undefined dynamic symbols
    exports: tuple[str, ...]  # defined global/weak dynamic symbols
    needed: tuple[str, ...]  # DT_NEEDED names, declaration order
    soname: str | None
    has_dynamic_symbols: bool


def read_object(path: str) -> ObjectInfo:
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_object(data, path=path)


def parse_object(data: bytes, path: str = "<memory>") -> ObjectInfo:
    if len(data) < 52 or data[:4] != _MAGIC:
        raise NotAnObjectFile(f"{path}: not an ELF object")
    ei_class, ei_data = data[4], data[5]
    if ei_class not in (1, 2):
        raise NotAnObjectFile(f"{path}: bad ELF class {ei_class}")
    if ei_data not in (1, 2):
        raise NotAnObjectFile(f"{path}: bad ELF data encoding {ei_data}")
    is64 = ei_class == 2
    little = ei_data == 1
    end = "<" if little else ">"

    if is64:
        # e_type e_machine e_version e_entry e_phoff e_shoff e_flags
        # e_ehsize e_phentsize e_phnum e_shentsize e_shnum e_shstrndx
        header = struct.Struct(end + "HHIQQQIHHHHHH")
    else:
        header = struct.Struct(end + "HHIIIIIHHHHHH")
    if len(data) < 16 + header.size:
        raise NotAnObjectFile(f"{path}: truncated ELF header")
    fields = header.unpack_from(data, 16)
    e_type = fields[0]
    e_shoff = fields[5]
    e_shentsize, e_shnum = fields[10], fields[11]

    type_name = _ET_NAMES.get(e_type, f"ET_{e_type}")
    if type_name not in ("ET_EXEC", "ET_DYN"):
        raise NotAnObjectFile(
            f"{path}: {type_name} is not an executable or shared object"
        )

    sections = _read_sections(data, path, end, is64, e_shoff, e_shentsize, e_shnum)

    imports: list[str] = []
    exports: list[str] = []
    needed: list[str] = []
    soname: str | None = None
    has_dynsym = False

    for sec in sections:
        if sec["type"] == _SHT_DYNSYM:
            has_dynsym = True
            strtab = _section_bytes(data, sections, sec["link"], path)
            imports, exports = _read_symbols(data, path, end, is64, sec, strtab)
        elif sec["type"] == _SHT_DYNAMIC:
            strtab = _section_bytes(data, sections, sec["link"], path)
            needed, soname = _read_dynamic(data, path, end, is64, sec, strtab)

    return ObjectInfo(
        path=path,
        elf_class=64 if is64 else 32,
        little_endian=little,
        object_type=type_name,
        imports=tuple(imports),
        exports=tuple(exports),
        needed=tuple(needed),
        soname=soname,
        has_dynamic_symbols=has_dynsym,
    )


def _read_sections(data, path, end, is64, shoff, shentsize, shnum) -> list[dict]:
    if shoff == 0 or shnum == 0:
        return []
    if is64:
        fmt = struct.Struct(end + "IIQQQQIIQQ")
    else:
        fmt = struct.Struct(end + "IIIIIIIIII")
    if shentsize < fmt.size:
        raise MalformedSymbolTable(f"{path}: section entry size {shentsize} too small")
    if shoff + shnum * shentsize > len(data):
        raise MalformedSymbolTable(f"{path}: section table beyond end of file")
    sections = []
    for i in range(shnum):
        vals = fmt.unpack_from(data, shoff + i * shentsize)
        sections.append({
            "type": vals[1],
            "offset": vals[4],
            "size": vals[5],
            "link": vals[6],
            "entsize": vals[9],
        })
    return sections


def _section_bytes(data, sections, index, path) -> bytes:
    if index >= len(sections):
        raise MalformedSymbolTable(f"{path}: string table index {index} out of range")
    sec = sections[index]
    lo, hi = sec["offset"], sec["offset"] + sec["size"]
    if hi > len(data):
        raise MalformedSymbolTable(f"{path}: string table beyond end of file")
    return data[lo:hi]


def _string_at(strtab: bytes, offset: int, path: str) -> str:
    if offset >= len(strtab):
        raise MalformedSymbolTable(f"{path}: string offset {offset} out of range")
    nul = strtab.find(b"\x00", offset)
    if nul < 0:
        raise MalformedSymbolTable(f"{path}: unterminated string at {offset}")
    return strtab[offset:nul].decode("utf-8", "replace")


def _read_symbols(data, path, end, is64, sec, strtab):
    if is64:
        fmt = struct.Struct(end + "IBBHQQ")  # name, info, other, shndx, value, size
    else:
        fmt = struct.Struct(end + "IIIBBH")  # name, value, size, info, other, shndx
    entsize = sec["entsize"] or fmt.size
    if entsize < fmt.size:
        raise MalformedSymbolTable(f"{path}: symbol entry size {entsize} too small")
    if sec["offset"] + sec["size"] > len(data):
        raise MalformedSymbolTable(f"{path}: symbol table beyond end of file")
    count = sec["size"] // entsize
    imports, exports = [], []
    for i in range(1, count):  # index 0 is the reserved null symbol
        vals = fmt.unpack_from(data, sec["offset"] + i * entsize)
        if is64:
            name_off, info, _other, shndx = vals[0], vals[1], vals[2], vals[3]
        else:
            name_off, info, _other, shndx = vals[0], vals[3], vals[4], vals[5]
        bind = info >> 4
        name = _string_at(strtab, name_off, path)
        if not name:
            continue
        if shndx == _SHN_UNDEF:
            if bind in (_STB_GLOBAL, _STB_WEAK):
                imports.append(name)
        elif bind in (_STB_GLOBAL, _STB_WEAK):
            exports.append(name)
    return imports, exports


def _read_dynamic(data, path, end, is64, sec, strtab):
    fmt = struct.Struct(end + ("qQ" if is64 else "iI"))
    entsize = sec["entsize"] or fmt.size
    if sec["offset"] + sec["size"] > len(data):
        raise MalformedSymbolTable(f"{path}: dynamic section beyond end of file")
    needed: list[str] = []
    soname = None
    for i in range(sec["size"] // entsize):
        tag, value = fmt.unpack_from(data, sec["offset"] + i * entsize)
        if tag == 0:  # DT_NULL terminates
            break
        if tag == _DT_NEEDED:
            needed.append(_string_at(strtab, value, path))
        elif tag == _DT_SONAME:
            soname = _string_at(strtab, value, path)
    return needed, soname
