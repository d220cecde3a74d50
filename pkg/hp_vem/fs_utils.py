"""Reading and writing result files on local paths or S3 URLs using PyFilesystem2.

Every file hp_vem produces (mesh XML, solution JSON, CSV tables, manifests)
is addressed by a single target string, either a local path or
``s3://bucket/prefix/name``. Credentials and an endpoint may be given the
PyFilesystem way: ``s3://key:secret@bucket/prefix/name?endpoint_url=...``.
"""
import logging
import os

import fs.opener
from fs.base import FS
from fs.osfs import OSFS
from fs_s3fs import S3FS

from .errors import ConfigError

logger = logging.getLogger(__name__)

S3_SCHEME = "s3://"


def is_s3(target):
    return target.startswith(S3_SCHEME)


def _s3_filesystem(url):
    parsed = fs.opener.parse(url)
    bucket, _, prefix = parsed.resource.partition("/")
    if not bucket:
        raise ConfigError(f"no S3 bucket in output target '{url}'")
    s3fs = S3FS(
        bucket,
        dir_path=prefix or "/",
        aws_access_key_id=parsed.username or None,
        aws_secret_access_key=parsed.password or None,
        endpoint_url=parsed.params.get("endpoint_url"),
        strict=parsed.params.get("strict") == "1",
    )
    # result prefixes have no directory marker objects
    s3fs.getinfo = s3fs._getinfo
    return s3fs


def open_filesystem(directory, create=False):
    """
    Filesystem rooted at a local directory or an S3 prefix.

    Args:
        directory (str | FS): local directory, ``s3://`` prefix, or an already opened filesystem
        create (bool): create a missing local directory

    Returns:
        FS: PyFilesystem2 filesystem, to be used as a context manager
    """
    if isinstance(directory, FS):
        return directory
    if is_s3(directory):
        return _s3_filesystem(directory)
    return OSFS(directory, create=create)


def split_target(target):
    """(directory, file name) of a result file target; local directories are made absolute."""
    if is_s3(target):
        prefix, _, name = target.rpartition("/")
        return prefix + "/", name
    resolved = os.path.abspath(target)
    return os.path.dirname(resolved), os.path.basename(resolved)


def write_bytes(target, data):
    directory, name = split_target(target)
    if not name:
        raise ConfigError(f"output target '{target}' names a directory, not a file")
    with open_filesystem(directory, create=True) as filesystem:
        with filesystem.open(name, "wb") as f:
            f.write(data)
    logger.debug("wrote %d bytes to %s", len(data), target)


def write_text(target, text):
    write_bytes(target, text.encode("utf-8"))


def read_bytes(target):
    directory, name = split_target(target)
    with open_filesystem(directory) as filesystem:
        with filesystem.open(name, "rb") as f:
            return f.read()


def read_text(target):
    return read_bytes(target).decode("utf-8")
