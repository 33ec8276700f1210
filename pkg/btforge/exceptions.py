"""
Custom exceptions for btforge
"""


class BtForgeError(Exception):
    """Base exception for all btforge errors"""

    # usage/schema errors map to exit code 2, domain failures to 1
    exit_code = 2

    def __init__(self, message: str, tip: str = None):
        """
        Initialize the exception with a message and optional tip.

        Args:
            message: Error message
            tip: Optional helpful tip for the user
        """
        self.message = message
        self.tip = tip
        super().__init__(self.format_message())

    def format_message(self) -> str:
        """Format the error message with optional tip."""
        if self.tip:
            return f"{self.message}\nTip: {self.tip}"
        return self.message


# --- tree format ---------------------------------------------------------

class TreeFormatError(BtForgeError):
    """Raised when text is not a tree of the supported XML dialect"""

    exit_code = 1

    def __init__(self, message: str, tip: str = None):
        if tip is None:
            tip = "Trees must use root/BehaviorTree and the Sequence, Fallback, Action, Condition, " \
                  "RetryUntilSuccessful, Timeout and SubTree elements"
        super().__init__(message, tip)


class MalformedXmlError(TreeFormatError):
    """Raised when the text is not well-formed XML"""

    def __init__(self, message: str, tip: str = None):
        if tip is None:
            tip = "Check for unclosed or early-closed elements"
        super().__init__(message, tip)


class UnknownTagError(TreeFormatError):
    """Raised when an element falls outside the node vocabulary"""


class MissingAttributeError(TreeFormatError):
    """Raised when a required attribute (ID, num_attempts, msec) is absent"""


class InvalidAttributeError(TreeFormatError):
    """Raised when an attribute value is out of range or not an integer"""


class MissingMainTreeError(TreeFormatError):
    """Raised when the main tree cannot be determined"""

    def __init__(self, message: str, tip: str = None):
        if tip is None:
            tip = 'Wrap the plan in <root main_tree_to_execute="MainTree"><BehaviorTree ID="MainTree">'
        super().__init__(message, tip)


class ChildArityError(TreeFormatError):
    """Raised when a node has the wrong number of children"""


class UnexpectedTextError(TreeFormatError):
    """Raised when free text appears between tree elements"""


class UnresolvedSubTreeError(TreeFormatError):
    """Raised when a SubTree references an undefined tree"""


class SubTreeCycleError(TreeFormatError):
    """Raised when SubTree references form a cycle"""


# --- execution -----------------------------------------------------------

class ExecutionError(BtForgeError):
    """Raised when a leaf handler fails or a leaf cannot be interpreted"""

    exit_code = 1


class UnknownObjectError(BtForgeError):
    """Raised when an object id is not in the world registry"""

    exit_code = 1

    def __init__(self, message: str, tip: str = None):
        if tip is None:
            tip = "Object ids must match the task's objects list exactly"
        super().__init__(message, tip)


class UnknownPrimitiveError(BtForgeError):
    """Raised when an action id has no symbolic semantics"""

    exit_code = 1


# --- inputs --------------------------------------------------------------

class SchemaError(BtForgeError):
    """Raised when a structured input file does not match its schema"""

    def __init__(self, message: str, path: str = None, tip: str = None):
        self.path = path
        if path:
            message = f"{message} (at {path})"
        super().__init__(message, tip)


class ConfigurationError(BtForgeError):
    """Raised when configuration file is invalid"""

    def __init__(self, message: str, tip: str = None):
        if tip is None:
            tip = "Check your .btforge.yml, primitive library and synonym files"
        super().__init__(message, tip)


class InvalidPathError(BtForgeError):
    """Raised when an input path is missing or of the wrong kind"""

    def __init__(self, message: str, tip: str = None):
        if tip is None:
            if "does not exist" in message:
                tip = "Make sure the path exists and is spelled correctly"
            elif "not a directory" in message:
                tip = "The path should point to a directory, not a file"
            else:
                tip = "Verify the path and your access permissions"
        super().__init__(message, tip)


class OutputDirectoryError(BtForgeError):
    """Raised when output directory cannot be created or accessed"""

    def __init__(self, message: str, tip: str = None):
        if tip is None:
            tip = "Ensure you have write permissions for the parent directory"
        super().__init__(message, tip)


class EmptyInputError(BtForgeError):
    """Raised when an aggregate is requested over no inputs"""


class RaggedAttemptsError(BtForgeError):
    """Raised when tasks have different numbers of attempts"""

    def __init__(self, message: str, tip: str = None):
        if tip is None:
            tip = "Every task needs exactly --attempts candidate outputs"
        super().__init__(message, tip)


# --- frames --------------------------------------------------------------

class DimensionMismatchError(BtForgeError):
    """Raised when embedding vectors differ in length"""


class KTooLargeError(BtForgeError):
    """Raised when more centers are requested than there are points"""


class DecodeError(BtForgeError):
    """Raised when an image cannot be decoded"""

    def __init__(self, message: str, tip: str = None):
        if tip is None:
            tip = "Frames must be readable raster images (PNG, JPEG)"
        super().__init__(message, tip)


class WrongFrameCountError(BtForgeError):
    """Raised when a contact sheet does not get exactly nine frames"""


# --- teacher / generation ------------------------------------------------

class GeneratorUnavailableError(BtForgeError):
    """Raised when the external generator cannot be reached"""

    def __init__(self, message: str, tip: str = None):
        if tip is None:
            tip = "Check --generator-cmd / --generator-url, or use precomputed outputs"
        super().__init__(message, tip)


class MalformedSceneAnalysisError(BtForgeError):
    """Raised when a Scene Analysis block lacks one of its five fields"""

    exit_code = 1

    def __init__(self, message: str, tip: str = None):
        if tip is None:
            tip = "Expected target, destination, expanded_instruction, scene_context, expected_sequence"
        super().__init__(message, tip)


class RetriesExhaustedError(BtForgeError):
    """Raised when the Architect never produced a conforming tree"""

    exit_code = 1

    def __init__(self, message: str, last_report=None, tip: str = None):
        self.last_report = last_report
        super().__init__(message, tip)


# --- augmentation --------------------------------------------------------

class BadTargetError(BtForgeError):
    """Raised when an augmentation target is not an Action node"""

    exit_code = 1


class UnknownConstructError(BtForgeError):
    """Raised when a structural construct is not retry, timeout or fallback"""


class RedundantConstructError(BtForgeError):
    """Raised when a construct would not add a new decorator tag"""

    exit_code = 1


class NoPriorGraspError(BtForgeError):
    """Raised when a placement needs an explicit object but nothing was grasped before it"""

    exit_code = 1
